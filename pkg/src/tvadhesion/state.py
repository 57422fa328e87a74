"""Plain data containers shared by the assembly, stepper and energy modules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


class ConfigError(ValueError):
    """Invalid solver or time-grid parameters; ``tag`` names the assumption."""

    def __init__(self, tag: str, message: str):
        super().__init__(f"{tag}: {message}")
        self.tag = tag


@dataclass(frozen=True, eq=False)
class StateSnapshot:
    """Unknowns and selections at one time node.

    ``theta`` (N,), ``u`` (N, 2), ``theta_s`` and ``chi`` (S,), ``sigma`` (S,)
    the selection in the subdifferential of the positive part, ``zeta`` (S, 2)
    the regularized contact reaction and ``xi`` (S,) the regularized
    constraint reaction on chi.
    """

    theta: np.ndarray
    u: np.ndarray
    theta_s: np.ndarray
    chi: np.ndarray
    sigma: Optional[np.ndarray] = None
    zeta: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None
    k: int = 0
    time: float = 0.0

    def replace(self, **kw) -> "StateSnapshot":
        return replace(self, **kw)

    def copy(self) -> "StateSnapshot":
        def c(a):
            return None if a is None else np.array(a, dtype=float, copy=True)
        return StateSnapshot(c(self.theta), c(self.u), c(self.theta_s), c(self.chi), c(self.sigma),
                             c(self.zeta), c(self.xi), self.k, self.time)


@dataclass(frozen=True)
class TimeGrid:
    """Equidistant partition of ``[0, T]`` into ``K`` steps."""

    T: float
    K: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigError("time-grid", f"horizon T must be positive, got {self.T}")
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError("time-grid", f"step count must be a positive integer, got {self.K}")

    @property
    def tau(self) -> float:
        return self.T / self.K

    def t(self, k: int) -> float:
        return k * self.T / self.K

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.K + 1)


@dataclass(frozen=True)
class SolverConfig:
    """Regularization parameters and nonlinear solver controls.

    Attributes
    ----------
    rho : float
        Coefficient of the ``|.|^(omega-2)`` rate regularization (>= 0).
    varsigma : float
        Yosida parameter.
    omega : float
        Exponent of the rate regularization, must exceed 4 when ``rho > 0``.
    eps, M : float
        Truncation levels; ``eps = 0`` and ``M = inf`` switch truncation off.
    damping : float
        Relaxation factor of the block fixed-point iteration.
    tol : float
        Absolute tolerance on the max-norm of the assembled residuals.
    max_iter : int
        Fixed-point iteration cap.
    newton_check : bool
        Cross-check each step against the finite-difference Newton oracle
        (only meant for tiny meshes).
    max_halvings : int
        Automatic step-halving retries on non-convergence.
    """

    rho: float = 0.01
    varsigma: float = 0.1
    omega: float = 6.0
    eps: float = 0.0
    M: float = math.inf
    damping: float = 0.7
    tol: float = 1e-10
    max_iter: int = 200
    newton_check: bool = False
    max_halvings: int = 3
    inner_max_iter: int = 50

    def __post_init__(self):
        if not self.rho >= 0:
            raise ConfigError("rho", f"rho must be >= 0, got {self.rho}")
        if not self.varsigma > 0:
            raise ConfigError("varsigma", f"Yosida parameter must be positive, got {self.varsigma}")
        if self.rho > 0 and not self.omega > 4:
            raise ConfigError("omega>4", f"exponent omega must exceed 4, got {self.omega}")
        if not 0.0 <= self.eps < 1.0:
            raise ConfigError("truncation-operators", f"eps must lie in [0, 1), got {self.eps}")
        if not self.M >= 1.0:
            raise ConfigError("truncation-operators", f"M must be >= 1 or inf, got {self.M}")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError("solver", f"damping must lie in (0, 1], got {self.damping}")
        if not self.tol > 0:
            raise ConfigError("solver", f"tolerance must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError("solver", "max_iter must be >= 1")

    def replace(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class StepData:
    """Local means of the loads on one time interval.

    ``h`` (N,) and ``ell`` (S,) are nodal values of the heat sources; ``f``
    (N, 2) the body force, ``g`` (N, 2) the traction at Neumann nodes and
    ``F`` (N, 2) the assembled load vector pairing with nodal displacements.
    """

    h: np.ndarray
    ell: np.ndarray
    f: np.ndarray
    g: np.ndarray
    F: np.ndarray = field(default=None)

    def sources_nonnegative(self) -> bool:
        return bool(np.all(self.h >= 0) and np.all(self.ell >= 0))
