"""Maximal monotone toolkit: Yosida approximations, truncations, splittings.

Everything here acts elementwise on scalars or numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import polynomial as P

_NEWTON_TOL = 1e-12


class MonotoneError(ValueError):
    pass


@dataclass(frozen=True)
class SmoothFunction:
    """A scalar C^2 function given by value and first two derivatives."""

    f: Callable
    df: Callable
    d2f: Callable
    label: str = ""

    @classmethod
    def polynomial(cls, coeffs, label: str = "") -> "SmoothFunction":
        """Polynomial with coefficients ordered from the constant term up."""
        c0 = np.asarray(coeffs, dtype=float)
        c1 = P.polyder(c0) if len(c0) > 1 else np.zeros(1)
        c2 = P.polyder(c1) if len(c1) > 1 else np.zeros(1)

        def ev(c):
            return lambda r: P.polyval(np.asarray(r, dtype=float), c)
        return cls(ev(c0), ev(c1), ev(c2), label or f"poly{tuple(float(c) for c in coeffs)}")

    @classmethod
    def zero(cls) -> "SmoothFunction":
        return cls.polynomial([0.0], "zero")

    def __call__(self, r):
        return self.f(r)


@dataclass(frozen=True)
class MonotoneGraph:
    """Subdifferential of a convex potential.

    Either the indicator of ``[lower, upper]`` (bounds may be infinite) or a
    user potential ``psi`` with derivatives ``dpsi``, ``d2psi``.
    """

    lower: float = -math.inf
    upper: float = math.inf
    psi: Optional[Callable] = None
    dpsi: Optional[Callable] = None
    d2psi: Optional[Callable] = None

    def __post_init__(self):
        if self.psi is None:
            if not self.lower <= self.upper:
                raise MonotoneError("empty interval")
            if not self.lower <= 0.0 <= self.upper:
                raise MonotoneError("the potential must vanish at 0, so 0 must be admissible")
        else:
            if self.dpsi is None or self.d2psi is None:
                raise MonotoneError("a custom potential needs its first two derivatives")
            if abs(float(self.psi(0.0))) > 1e-12:
                raise MonotoneError("the potential must vanish at 0")

    @property
    def is_interval(self) -> bool:
        return self.psi is None

    @classmethod
    def interval(cls, lower: float, upper: float) -> "MonotoneGraph":
        return cls(lower=float(lower), upper=float(upper))

    @classmethod
    def custom(cls, psi, dpsi, d2psi) -> "MonotoneGraph":
        return cls(psi=psi, dpsi=dpsi, d2psi=d2psi)

    def potential(self, x):
        """Unregularized potential (``inf`` outside the interval)."""
        x = np.asarray(x, dtype=float)
        if self.is_interval:
            return np.where((x >= self.lower) & (x <= self.upper), 0.0, np.inf)
        return np.asarray(self.psi(x), dtype=float)


NON_PENETRATION = MonotoneGraph.interval(-math.inf, 0.0)
UNIT_INTERVAL = MonotoneGraph.interval(0.0, 1.0)


@dataclass(frozen=True)
class RegularizationParams:
    """Yosida parameter and truncation levels."""

    varsigma: float = 0.1
    eps: float = 0.0
    M: float = math.inf

    def __post_init__(self):
        if not self.varsigma > 0:
            raise MonotoneError(f"Yosida parameter must be positive, got {self.varsigma}")
        if not 0.0 <= self.eps < 1.0:
            raise MonotoneError(f"truncation level eps must lie in [0, 1), got {self.eps}")
        if not (self.M >= 1.0):
            raise MonotoneError(f"truncation level M must be >= 1 or inf, got {self.M}")


def _check_varsigma(varsigma):
    if not varsigma > 0:
        raise MonotoneError(f"Yosida parameter must be positive, got {varsigma}")


def _custom_resolvent_scalar(g: MonotoneGraph, s: float, x: float) -> float:
    # J + s psi'(J) = x, the left side is strictly increasing in J
    d = float(g.dpsi(x))
    lo, hi = (x - s * d, x) if d >= 0 else (x, x - s * d)
    if lo == hi:
        return x
    J = x
    for _ in range(200):
        F = J + s * float(g.dpsi(J)) - x
        if abs(F) <= _NEWTON_TOL * max(1.0, abs(x)):
            return J
        if F > 0:
            hi = J
        else:
            lo = J
        dF = 1.0 + s * float(g.d2psi(J))
        Jn = J - F / dF if dF > 0 else 0.5 * (lo + hi)
        if not lo < Jn < hi:
            Jn = 0.5 * (lo + hi)
        J = Jn
        if hi - lo <= _NEWTON_TOL * max(1.0, abs(x)):
            return 0.5 * (lo + hi)
    return J


def resolvent(graph: MonotoneGraph, varsigma: float, x):
    """Resolvent ``(I + varsigma * graph)^{-1}(x)``."""
    _check_varsigma(varsigma)
    x = np.asarray(x, dtype=float)
    if graph.is_interval:
        return np.clip(x, graph.lower, graph.upper)
    f = np.vectorize(lambda v: _custom_resolvent_scalar(graph, varsigma, v), otypes=[float])
    return f(x)


def yosida(graph: MonotoneGraph, varsigma: float, x):
    """Yosida approximation ``(x - resolvent(x)) / varsigma``."""
    _check_varsigma(varsigma)
    x = np.asarray(x, dtype=float)
    if graph.is_interval:
        return (np.minimum(x - graph.lower, 0.0) + np.maximum(x - graph.upper, 0.0)) / varsigma
    return (x - resolvent(graph, varsigma, x)) / varsigma


def yosida_derivative(graph: MonotoneGraph, varsigma: float, x):
    """Derivative of :func:`yosida` in ``x`` (a Clarke element at kinks)."""
    _check_varsigma(varsigma)
    x = np.asarray(x, dtype=float)
    if graph.is_interval:
        return np.where((x < graph.lower) | (x > graph.upper), 1.0 / varsigma, 0.0)
    J = resolvent(graph, varsigma, x)
    c = np.asarray(graph.d2psi(J), dtype=float)
    return c / (1.0 + varsigma * c)


def envelope(graph: MonotoneGraph, varsigma: float, x):
    """Moreau envelope, the primitive of :func:`yosida` vanishing at 0."""
    _check_varsigma(varsigma)
    x = np.asarray(x, dtype=float)
    if graph.is_interval:
        d = x - np.clip(x, graph.lower, graph.upper)
        return d * d / (2.0 * varsigma)
    J = resolvent(graph, varsigma, x)
    return np.asarray(graph.psi(J), dtype=float) + (x - J) ** 2 / (2.0 * varsigma)


# ---------------------------------------------------------------------------
# truncations

def trunc_eps(eps: float, r):
    """``max(r, eps)``; ``eps = 0`` means the identity."""
    r = np.asarray(r, dtype=float)
    return r if eps == 0 else np.maximum(r, eps)


def trunc_eps_derivative(eps: float, r):
    r = np.asarray(r, dtype=float)
    return np.ones_like(r) if eps == 0 else np.where(r > eps, 1.0, 0.0)


def trunc_M(M: float, r):
    """``min(max(r, 0), M)``; ``M = inf`` means the positive part."""
    return np.minimum(np.maximum(np.asarray(r, dtype=float), 0.0), M)


def trunc_M_derivative(M: float, r):
    r = np.asarray(r, dtype=float)
    return np.where((r > 0) & (r < M), 1.0, 0.0)


def alpha_M(constitutive, M: float, r):
    """Truncated conductivity ``alpha(T_M(r))``."""
    return constitutive.alpha(trunc_M(M, r))


def alpha_M_derivative(constitutive, M: float, r):
    return constitutive.alpha_prime(trunc_M(M, r)) * trunc_M_derivative(M, r)


def positive_part(r):
    return np.maximum(np.asarray(r, dtype=float), 0.0)


def heaviside(r):
    """Derivative of the positive part (1 on r > 0)."""
    return np.where(np.asarray(r) > 0, 1.0, 0.0)


def sigma_select(chi):
    """Selection in the subdifferential of the positive part: 1 on chi >= 0."""
    return np.where(np.asarray(chi, dtype=float) >= 0, 1.0, 0.0)


# ---------------------------------------------------------------------------
# splittings

def _second_differences(f: Callable, lo: float, hi: float, n: int):
    r = np.linspace(lo, hi, n)
    v = np.asarray(f(r), dtype=float)
    d2 = v[2:] - 2.0 * v[1:-1] + v[:-2]
    tol = 64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(v))))
    return r[1:-1], d2, tol


def check_concave(f: Callable, interval=(-10.0, 10.0), n: int = 10_000, name: str = "function"):
    r, d2, tol = _second_differences(f, interval[0], interval[1], n)
    bad = d2 > tol
    if np.any(bad):
        raise MonotoneError(f"{name} is not concave near r={r[bad][0]:.6g}")


def check_convex(f: Callable, interval=(-10.0, 10.0), n: int = 10_000, name: str = "function"):
    r, d2, tol = _second_differences(f, interval[0], interval[1], n)
    bad = d2 < -tol
    if np.any(bad):
        raise MonotoneError(f"{name} is not convex near r={r[bad][0]:.6g}")


def split_lambda(lam, delta: float, r, *, check: bool = True, interval=(-10.0, 10.0)):
    """Return ``(lam(r) - delta r^2 / 2, delta r^2 / 2)``.

    With ``check`` the concave part is scanned by second differences.
    """
    f = lam.f if isinstance(lam, SmoothFunction) else lam
    if check:
        check_concave(lambda s: f(s) - 0.5 * delta * s * s, interval, name="lambda - delta r^2/2")
    r = np.asarray(r, dtype=float)
    q = 0.5 * delta * r * r
    return f(r) - q, q


def split_gamma(gam, nu: float, r, *, check: bool = True, interval=(-10.0, 10.0)):
    """Return ``(gam(r) + nu r^2 / 2, -nu r^2 / 2)``.

    With ``check`` the convex part is scanned by second differences.
    """
    f = gam.f if isinstance(gam, SmoothFunction) else gam
    if check:
        check_convex(lambda s: f(s) + 0.5 * nu * s * s, interval, name="gamma + nu r^2/2")
    r = np.asarray(r, dtype=float)
    q = 0.5 * nu * r * r
    return f(r) + q, -q
