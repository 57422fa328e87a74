"""Nonlocal interaction operator on the contact surface.

The operator ``(Jw)(x) = int j(x, y) w(y) dy`` is discretized with the lumped
trapezoidal rule on the surface nodes, which keeps symmetry (under the
weighting) and positivity exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import SurfaceMesh


class KernelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Discrete nonlocal operator.

    Attributes
    ----------
    K : (S, S) array
        ``K[i, j] = j(x_i, x_j) * w_j``.
    weights : (S,) array
        Trapezoidal node weights, summing to the length of the contact side.
    sup_norm : float
        Max of the kernel over sampled node pairs.
    """

    K: np.ndarray
    weights: np.ndarray
    sup_norm: float

    @property
    def n(self) -> int:
        return len(self.weights)

    def weighted(self) -> np.ndarray:
        """Symmetric matrix ``w_i K[i, j]``."""
        return self.weights[:, None] * self.K


def constant_kernel(value: float = 1.0) -> Callable:
    def j(x, y):
        return np.full(np.broadcast(x, y).shape, float(value))
    return j


def exp_kernel(amplitude: float = 1.0, length: float = 1.0) -> Callable:
    """``amplitude * exp(-|x - y| / length)``."""
    def j(x, y):
        return amplitude * np.exp(-np.abs(np.asarray(x) - np.asarray(y)) / length)
    return j


def assemble_kernel(kernel: Callable, surface: SurfaceMesh) -> KernelMatrix:
    """Assemble the lumped quadrature matrix of ``kernel`` on ``surface``.

    ``kernel`` is called once with broadcast arrays of node positions
    (arc-length coordinates along the contact side).
    """
    x = surface.positions
    vals = np.asarray(kernel(x[:, None], x[None, :]), dtype=float)
    vals = np.broadcast_to(vals, (len(x), len(x)))
    if not np.all(np.isfinite(vals)):
        raise KernelError("kernel returned a non-finite value")
    if np.any(vals < 0):
        raise KernelError("kernel returned a negative value")
    if not np.allclose(vals, vals.T, rtol=1e-12, atol=0.0):
        raise KernelError("kernel is not symmetric on the node pairs")
    w = surface.weights.copy()
    return KernelMatrix(K=vals * w[None, :], weights=w, sup_norm=float(vals.max(initial=0.0)))


def apply_J(K: KernelMatrix, w_field) -> np.ndarray:
    """Nodal values of ``J w``."""
    f = np.asarray(w_field, dtype=float)
    if f.shape != (K.n,):
        raise KernelError(f"field has shape {f.shape}, expected ({K.n},)")
    return K.K @ f


def gap_form(K: KernelMatrix, chi, theta_trace, theta_s) -> float:
    """``sum_ij w_i K_ij chi_i chi_j (theta_i - theta_s_j)^2`` (requires chi >= 0)."""
    chi = np.asarray(chi, dtype=float)
    if np.any(chi < 0):
        raise KernelError("gap_form needs a nonnegative chi (pass the positive part)")
    th = np.asarray(theta_trace, dtype=float)
    ts = np.asarray(theta_s, dtype=float)
    diff = th[:, None] - ts[None, :]
    return float(np.sum(K.weighted() * np.outer(chi, chi) * diff * diff))
