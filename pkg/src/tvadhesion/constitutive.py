"""Material functions and tensors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla
from scipy import integrate

from . import geometry
from .monotone import (NON_PENETRATION, UNIT_INTERVAL, MonotoneError, MonotoneGraph,
                       SmoothFunction, check_concave, check_convex, envelope, trunc_M)

SQ2 = math.sqrt(2.0)


class ConstitutiveError(ValueError):
    """Raised when a material assumption fails; ``tag`` names the assumption."""

    def __init__(self, tag: str, message: str):
        super().__init__(f"{tag}: {message}")
        self.tag = tag


def isotropic_tensor(lame_lambda: float, lame_mu: float) -> np.ndarray:
    """Fourth-order isotropic tensor ``lambda d_ij d_kh + mu (d_ik d_jh + d_ih d_jk)``."""
    d = np.eye(2)
    return (lame_lambda * np.einsum("ij,kh->ijkh", d, d)
            + lame_mu * (np.einsum("ik,jh->ijkh", d, d) + np.einsum("ih,jk->ijkh", d, d)))


def mandel(C: np.ndarray) -> np.ndarray:
    """3x3 Mandel matrix of a minor-symmetric 2D fourth-order tensor."""
    idx = [(0, 0), (1, 1), (0, 1)]
    fac = [1.0, 1.0, SQ2]
    D = np.empty((3, 3))
    for a, (i, j) in enumerate(idx):
        for b, (k, h) in enumerate(idx):
            D[a, b] = fac[a] * fac[b] * C[i, j, k, h]
    return D


def tensor_symmetry_defect(C: np.ndarray) -> float:
    return float(max(np.abs(C - C.transpose(1, 0, 2, 3)).max(),
                     np.abs(C - C.transpose(2, 3, 0, 1)).max()))


@dataclass(frozen=True, eq=False)
class Constitutive:
    """Material data.

    Conductivity is ``alpha(t) = kappa0 + kappa1 * t**mu`` unless a custom
    ``alpha_fn`` (with ``alpha_prime_fn``) is given.  ``k`` is the surface
    exchange coefficient as a function of the adhesion parameter, ``lam`` the
    latent-heat function with concavity modulus ``delta`` and ``gam`` the
    smooth part of the adhesion potential with convexity modulus ``nu``.
    """

    kappa0: float = 1.0
    kappa1: float = 1.0
    mu: float = 2.0
    alpha_fn: Optional[Callable] = None
    alpha_prime_fn: Optional[Callable] = None
    k: SmoothFunction = field(default_factory=lambda: SmoothFunction.polynomial([1.0, 0.0, 1.0], "k"))
    C_k: float = 1.0
    s_k: float = 2.0
    lam: SmoothFunction = field(default_factory=lambda: SmoothFunction.polynomial([0.0, 0.5], "lambda"))
    delta: float = 0.0
    gam: SmoothFunction = field(default_factory=lambda: SmoothFunction.polynomial([0.0625, -0.25, 0.25], "gamma"))
    nu: float = 0.0
    beta: MonotoneGraph = UNIT_INTERVAL
    eta: MonotoneGraph = NON_PENETRATION
    elastic: np.ndarray = field(default_factory=lambda: isotropic_tensor(1.0, 1.0))
    viscous: np.ndarray = field(default_factory=lambda: isotropic_tensor(0.5, 0.5))
    sample_range: tuple = (-10.0, 10.0)

    # ------------------------------------------------------------------ alpha
    @property
    def c0(self) -> float:
        return min(self.kappa0, self.kappa1)

    @property
    def c1(self) -> float:
        return max(self.kappa0, self.kappa1)

    def alpha(self, t):
        t = np.asarray(t, dtype=float)
        if self.alpha_fn is not None:
            return np.asarray(self.alpha_fn(t), dtype=float)
        return self.kappa0 + self.kappa1 * np.abs(t) ** self.mu

    def alpha_prime(self, t):
        t = np.asarray(t, dtype=float)
        if self.alpha_fn is not None:
            return np.asarray(self.alpha_prime_fn(t), dtype=float)
        if self.kappa1 == 0:
            return np.zeros_like(t)
        return self.kappa1 * self.mu * np.sign(t) * np.abs(t) ** (self.mu - 1)

    # -------------------------------------------------------- exchange k(chi)
    def k_value(self, x):
        return np.maximum(np.asarray(self.k(np.asarray(x, dtype=float)), dtype=float), 0.0)

    # ------------------------------------------------------------- tensors
    @property
    def D_elastic(self) -> np.ndarray:
        return mandel(self.elastic)

    @property
    def D_viscous(self) -> np.ndarray:
        return mandel(self.viscous)

    @property
    def eps0(self) -> float:
        return float(np.linalg.eigvalsh(self.D_elastic)[0])

    @property
    def nu0(self) -> float:
        return float(np.linalg.eigvalsh(self.D_viscous)[0])

    # ------------------------------------------------------------ lambda
    @property
    def L_lambda(self) -> float:
        r = np.linspace(*self.sample_range, 10_001)
        return float(np.max(np.abs(self.lam.df(r))))

    def lam_delta_prime(self, r):
        """Derivative of the concave part ``lam - delta r^2/2``."""
        return self.lam.df(r) - self.delta * np.asarray(r, dtype=float)

    def gam_nu_prime(self, r):
        """Derivative of the convex part ``gam + nu r^2/2``."""
        return self.gam.df(r) + self.nu * np.asarray(r, dtype=float)

    def gam_nu_second(self, r):
        return self.gam.d2f(r) + self.nu

    # ---------------------------------------------------------------- W
    @property
    def C_W(self) -> float:
        """Lower-bound constant of ``W = beta_hat + gam`` over the domain of beta_hat."""
        lo = max(self.beta.lower, self.sample_range[0])
        hi = min(self.beta.upper, self.sample_range[1])
        r = np.linspace(lo, hi, 10_001)
        return float(max(0.0, -np.min(self.gam(r))))

    def check_hypotheses(self, theta_max: float = 50.0, n: int = 2001) -> list:
        """Return a list of ``(tag, message)`` for every violated assumption."""
        out = []
        t = np.linspace(0.0, theta_max, n)
        if self.c0 <= 0:
            out.append(("hyp-alpha", f"c0 = {self.c0} must be positive"))
        if not self.mu > 1:
            out.append(("hyp-alpha", f"exponent mu = {self.mu} must exceed 1"))
        if self.c0 > 0:
            a = self.alpha(t)
            g = 1.0 + t ** self.mu
            lo = a < self.c0 * g * (1 - 1e-12)
            hi = a > self.c1 * g * (1 + 1e-12)
            if np.any(lo | hi):
                bad = t[lo | hi][0]
                out.append(("hyp-alpha", f"growth violated at theta={bad:.6g}"))
        x = np.linspace(*self.sample_range, n)
        kv = np.asarray(self.k(x), dtype=float)
        if np.any(kv < -1e-12):
            out.append(("hyp-kappa", f"k negative at x={x[kv < -1e-12][0]:.6g}"))
        if not self.s_k > 1:
            out.append(("hyp-kappa", f"growth exponent s = {self.s_k} must exceed 1"))
        over = kv > self.C_k * (np.abs(x) ** self.s_k + 1) * (1 + 1e-12)
        if np.any(over):
            out.append(("hyp-kappa", f"polynomial growth violated at x={x[over][0]:.6g}"))
        if self.delta < 0:
            out.append(("hyp-lambda", f"concavity modulus delta = {self.delta} must be >= 0"))
        try:
            check_concave(lambda r: self.lam(r) - 0.5 * self.delta * r * r, self.sample_range,
                          name="lambda - delta r^2/2")
        except MonotoneError as e:
            out.append(("hyp-lambda", str(e)))
        if self.nu < 0:
            out.append(("hyp-W", f"convexity modulus nu = {self.nu} must be >= 0"))
        try:
            check_convex(lambda r: self.gam(r) + 0.5 * self.nu * r * r, self.sample_range,
                         name="gamma + nu r^2/2")
        except MonotoneError as e:
            out.append(("hyp-W", str(e)))
        for name, C in (("elasticity", self.elastic), ("viscosity", self.viscous)):
            if tensor_symmetry_defect(C) > 1e-12 * max(1.0, np.abs(C).max()):
                out.append(("ass-K", f"{name} tensor lacks the major/minor symmetries"))
            if np.linalg.eigvalsh(mandel(C))[0] <= 0:
                out.append(("ass-K", f"{name} tensor is not elliptic"))
        return out

    def validate(self, **kw) -> "Constitutive":
        bad = self.check_hypotheses(**kw)
        if bad:
            raise ConstitutiveError(*bad[0])
        return self


# ---------------------------------------------------------------------------
# primitives of alpha

def alpha_hat(c: Constitutive, r):
    """Primitive ``int_0^r alpha``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ConstitutiveError("def-hat-alpha", "alpha_hat needs r >= 0")
    if c.alpha_fn is None:
        return c.kappa0 * r + c.kappa1 * r ** (c.mu + 1) / (c.mu + 1)
    f = np.vectorize(lambda v: integrate.quad(c.alpha_fn, 0.0, v, epsabs=1e-12, epsrel=1e-12)[0],
                     otypes=[float])
    return f(r)


def alpha_double_hat(c: Constitutive, r):
    """Second primitive ``int_0^r alpha_hat``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ConstitutiveError("def-hat-alpha", "alpha_double_hat needs r >= 0")
    if c.alpha_fn is None:
        return 0.5 * c.kappa0 * r * r + c.kappa1 * r ** (c.mu + 2) / ((c.mu + 1) * (c.mu + 2))
    f = np.vectorize(lambda v: integrate.quad(lambda s: float(alpha_hat(c, s)), 0.0, v,
                                              epsabs=1e-12, epsrel=1e-12)[0], otypes=[float])
    return f(r)


def alpha_double_hat_M(c: Constitutive, M: float, r):
    """``int_0^r alpha_hat(T_M(s)) ds`` (linear continuation beyond M)."""
    r = np.asarray(r, dtype=float)
    inner = np.minimum(r, M)
    val = alpha_double_hat(c, inner)
    if math.isfinite(M):
        val = val + alpha_hat(c, M) * np.maximum(r - M, 0.0)
    return val


def hat_doublehat_constants(c: Constitutive) -> tuple:
    """Constants with ``alpha_hat(T_M(r)) <= C1 * doublehat_M(r) + C2`` for all M.

    For r <= 2 the left side is at most ``alpha_hat(2)``; for r >= 2,
    ``doublehat_M(r) >= alpha_hat(T_M(r/2))`` and the growth bounds give the
    doubling factor ``(c1/c0) 2^(mu+1)``.
    """
    C1 = c.c1 / c.c0 * 2.0 ** (c.mu + 1)
    C2 = float(alpha_hat(c, 2.0))
    return C1, C2


# ---------------------------------------------------------------------------
# bilinear forms

def _vec(u, n):
    u = np.asarray(u, dtype=float)
    if u.shape != (n, 2):
        raise ConstitutiveError("fields", f"vector field has shape {u.shape}, expected ({n}, 2)")
    return u.ravel()


def _bilinear(D, mesh, u, w, strict):
    bulk = mesh[0] if isinstance(mesh, tuple) else getattr(mesh, "bulk", mesh)
    n = bulk.n_nodes
    a, b = _vec(u, n), _vec(w, n)
    if strict:
        dn = bulk.dirichlet_nodes
        if np.any(np.asarray(u)[dn] != 0) or np.any(np.asarray(w)[dn] != 0):
            raise ConstitutiveError("ass-domain", "fields must vanish on Dirichlet nodes")
    A = geometry.vector_form_matrix(bulk, D)
    return float(a @ (A @ b))


def bilinear_e(c: Constitutive, mesh, u, w, strict: bool = True) -> float:
    """Elastic form ``int E eps(u) : eps(w)`` with exact P1 quadrature."""
    return _bilinear(c.D_elastic, mesh, u, w, strict)


def bilinear_v(c: Constitutive, mesh, u, w, strict: bool = True) -> float:
    """Viscous form ``int V eps(u) : eps(w)``."""
    return _bilinear(c.D_viscous, mesh, u, w, strict)


def coercivity_constant(c: Constitutive, bulk, which: str = "e") -> float:
    """Smallest generalized eigenvalue of the form against the discrete H^1 product."""
    D = c.D_elastic if which == "e" else c.D_viscous
    A = geometry.vector_form_matrix(bulk, D)
    G = geometry.vector_h1_gram(bulk)
    free = np.repeat(bulk.free_mask(), 2)
    A = A[free][:, free]
    G = G[free][:, free]
    if A.shape[0] <= 1500:
        return float(scipy.linalg.eigh(A.toarray(), G.toarray(), eigvals_only=True,
                                       subset_by_index=[0, 0])[0])
    vals = spla.eigsh(A.tocsc(), k=1, M=G.tocsc(), sigma=0.0, which="LM",
                      return_eigenvectors=False)
    return float(vals[0])


def potential_W(c: Constitutive, varsigma: float, x):
    """Regularized adhesion potential ``beta_hat_varsigma(x) + gam(x)``."""
    return envelope(c.beta, varsigma, x) + c.gam(np.asarray(x, dtype=float))


def truncated_alpha_hat(c: Constitutive, M: float, r):
    return alpha_hat(c, trunc_M(M, r))
