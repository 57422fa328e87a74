"""Residuals of the four discrete equations and their diagonal Jacobian blocks.

Every residual is "left-hand side minus right-hand side" tested against the
P1 hat functions, so entries carry the integration weight of their node.
Bilinear terms (stiffness, elastic and viscous forms) are integrated exactly.
Zeroth-order nonlinear terms (pressure coupling, viscous heating, heat
sources, everything on the contact side) use the nodal (vertex) rule; the
conductivity is evaluated at element centroids.  With this choice the
contributions cancel in the energy identity exactly as in the continuous
setting and the lumped heat operator stays an M-matrix on the structured mesh.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from . import geometry
from .constitutive import Constitutive
from .geometry import BulkMesh, SurfaceMesh
from .kernels import KernelMatrix, assemble_kernel, constant_kernel
from .monotone import (alpha_M, alpha_M_derivative, heaviside, positive_part, sigma_select,
                       trunc_eps, trunc_eps_derivative, yosida, yosida_derivative)
from .state import ConfigError, SolverConfig, StateSnapshot, StepData

FIELDS = ("u", "chi", "theta", "theta_s")


class AssemblyError(ValueError):
    pass


class _Pattern:
    """Fixed sparsity pattern: sums COO data into CSR storage quickly.

    Entries whose row or column is not kept (``keep`` mask) are dropped and
    indices are renumbered to the kept set.
    """

    def __init__(self, rows, cols, n, keep=None):
        rows = np.asarray(rows).ravel()
        cols = np.asarray(cols).ravel()
        if keep is None:
            keep = np.ones(n, dtype=bool)
        newid = np.cumsum(keep) - 1
        self.m = int(keep.sum())
        self.sel = keep[rows] & keep[cols]
        r, c = newid[rows[self.sel]], newid[cols[self.sel]]
        lin = r * self.m + c
        uniq, self.inv = np.unique(lin, return_inverse=True)
        self.indices = (uniq % self.m).astype(np.int32)
        ur = uniq // self.m
        self.indptr = np.searchsorted(ur, np.arange(self.m + 1)).astype(np.int32)
        self.nnz = len(uniq)

    def matrix(self, data) -> sp.csr_matrix:
        d = np.bincount(self.inv, weights=np.asarray(data).ravel()[self.sel], minlength=self.nnz)
        return sp.csr_matrix((d, self.indices, self.indptr), shape=(self.m, self.m))


@dataclass(eq=False)
class ProblemContext:
    """Meshes, materials, kernel and the precomputed linear operators.

    ``frozen`` lists unknowns held at their previous value (used for the
    decoupled reductions); allowed names are ``u``, ``chi``, ``theta``,
    ``theta_s``.
    """

    bulk: BulkMesh
    surface: SurfaceMesh
    constitutive: Constitutive = field(default_factory=Constitutive)
    kernel: Optional[KernelMatrix] = None
    frozen: frozenset = frozenset()

    def __post_init__(self):
        if self.kernel is None:
            self.kernel = assemble_kernel(constant_kernel(0.0), self.surface)
        self.frozen = frozenset(self.frozen)
        unknown = self.frozen - set(FIELDS)
        if unknown:
            raise AssemblyError(f"unknown frozen fields {sorted(unknown)}")
        b = self.bulk
        self.N = b.n_nodes
        self.S = self.surface.n_nodes
        self.mass = b.lumped_mass
        self.tri = b.triangles
        self.areas = b.areas
        self.B = geometry.strain_operator(b)
        self.dofs = geometry.vector_dofs(b)
        E = len(b.areas)
        self.B_glob = sp.csr_matrix((self.B.ravel(), (np.repeat(np.arange(3 * E), 6),
                                     np.repeat(self.dofs, 3, axis=0).ravel())), shape=(3 * E, 2 * b.n_nodes))
        self.B_globT = self.B_glob.T.tocsr()
        self.K_E = geometry.vector_form_matrix(b, self.constitutive.D_elastic)
        self.K_V = geometry.vector_form_matrix(b, self.constitutive.D_viscous)
        self.D_V = self.constitutive.D_viscous
        self.D_E = self.constitutive.D_elastic
        self.st_rows, self.st_cols, self.st_local = geometry.scalar_stiffness_pattern(b)
        bdiv = self.B[:, 0, :] + self.B[:, 1, :]
        rows = np.repeat(self.tri[:, :, None], 6, axis=2).ravel()
        cols = np.repeat(self.dofs[:, None, :], 3, axis=1).ravel()
        vals = ((self.areas / 3.0)[:, None, None] * bdiv[:, None, :]).repeat(1, axis=1)
        vals = np.broadcast_to(vals, (len(self.areas), 3, 6)).ravel()
        self.P_div = sp.csr_matrix((vals, (rows, cols)), shape=(self.N, 2 * self.N))
        self.v_rows = np.repeat(self.dofs, 6, axis=1).ravel()
        self.v_cols = np.tile(self.dofs, (1, 6)).ravel()
        self.free = b.free_mask()
        self.free_dofs = np.flatnonzero(np.repeat(self.free, 2))
        self.bidx = self.surface.bulk_index
        self.w = self.surface.weights
        self.normal = self.surface.normal
        self.S_chi = self.surface.stiffness().toarray()
        self.Kj = self.kernel.K
        self.h_s = self.surface.lengths
        self.neumann_w = b.boundary_weights(geometry.NEUMANN)
        self.st_pattern = _Pattern(self.st_rows, self.st_cols, self.N)
        keep = np.repeat(self.free, 2)
        self.u_pattern = _Pattern(self.v_rows, self.v_cols, 2 * self.N, keep)
        cdofs = np.stack([2 * self.bidx, 2 * self.bidx + 1], axis=1)
        self.c_rows = np.repeat(cdofs, 2, axis=1)
        self.c_cols = np.tile(cdofs, (1, 2))
        self.uc_pattern = _Pattern(np.concatenate([self.v_rows, self.c_rows.ravel()]),
                                   np.concatenate([self.v_cols, self.c_cols.ravel()]), 2 * self.N, keep)
        self._lin_cache = {}

    @classmethod
    def build(cls, bulk: BulkMesh, surface: SurfaceMesh, constitutive: Constitutive | None = None,
              kernel: Union[Callable, KernelMatrix, None] = None, frozen=()) -> "ProblemContext":
        if kernel is not None and not isinstance(kernel, KernelMatrix):
            kernel = assemble_kernel(kernel, surface)
        return cls(bulk, surface, constitutive or Constitutive(), kernel, frozenset(frozen))

    # ---------------------------------------------------------------- helpers
    def lump(self, elem_values) -> np.ndarray:
        """Vertex-rule integral of a per-element constant against each hat."""
        v = np.repeat((self.areas / 3.0 * elem_values)[:, None], 3, axis=1)
        return np.bincount(self.tri.ravel(), weights=v.ravel(), minlength=self.N)

    def strain(self, u) -> np.ndarray:
        """Mandel strain per element (E, 3) of a nodal displacement (N, 2)."""
        return (self.B_glob @ np.asarray(u, dtype=float).ravel()).reshape(-1, 3)

    def scatter_vector(self, local) -> np.ndarray:
        """Add per-element 6-vectors into a global interleaved vector."""
        return np.bincount(self.dofs.ravel(), weights=local.ravel(), minlength=2 * self.N)

    def stiffness_apply(self, coef, theta) -> np.ndarray:
        loc = np.einsum("eab,eb->ea", self.st_local, theta[self.tri]) * coef[:, None]
        return np.bincount(self.tri.ravel(), weights=loc.ravel(), minlength=self.N)

    def stiffness_matrix(self, coef) -> sp.csr_matrix:
        return self.st_pattern.matrix(coef[:, None, None] * self.st_local)

    def linear_momentum_local(self, tau) -> np.ndarray:
        """Element matrices of ``V / tau + E`` (cached per step size)."""
        key = float(tau)
        if key not in self._lin_cache:
            D = self.D_V / tau + self.D_E
            self._lin_cache = {key: self.areas[:, None, None]
                               * np.einsum("eai,ab,ebj->eij", self.B, D, self.B)}
        return self._lin_cache[key]

    def surface_stiffness(self, coef) -> np.ndarray:
        k = coef / self.h_s
        S = np.zeros((self.S, self.S))
        i = np.arange(self.S - 1)
        S[i, i] += k
        S[i + 1, i + 1] += k
        S[i, i + 1] -= k
        S[i + 1, i] -= k
        return S

    def load_vector(self, f, g) -> np.ndarray:
        """Assembled ``<F, v>`` for nodal body force ``f`` and traction ``g``."""
        return self.mass[:, None] * np.asarray(f) + self.neumann_w[:, None] * np.asarray(g)

    def step_data(self, h=0.0, ell=0.0, f=None, g=None) -> StepData:
        """StepData from nodal (or constant) load values."""
        h = np.broadcast_to(np.asarray(h, dtype=float), (self.N,)).copy()
        ell = np.broadcast_to(np.asarray(ell, dtype=float), (self.S,)).copy()
        f = np.zeros((self.N, 2)) if f is None else np.broadcast_to(np.asarray(f, float), (self.N, 2)).copy()
        g = np.zeros((self.N, 2)) if g is None else np.broadcast_to(np.asarray(g, float), (self.N, 2)).copy()
        return StepData(h=h, ell=ell, f=f, g=g, F=self.load_vector(f, g))

    def check_state(self, s: StateSnapshot):
        if np.shape(s.theta) != (self.N,) or np.shape(s.u) != (self.N, 2):
            raise AssemblyError("bulk field size does not match the mesh")
        if np.shape(s.theta_s) != (self.S,) or np.shape(s.chi) != (self.S,):
            raise AssemblyError("surface field size does not match the contact mesh")


def _check(prev, cand, tau, ctx):
    if not tau > 0:
        raise AssemblyError(f"time step must be positive, got {tau}")
    if prev is not cand:
        ctx.check_state(cand)


# ---------------------------------------------------------------------------
# residuals

def residual_bulk_heat(prev: StateSnapshot, cand: StateSnapshot, data: StepData, tau: float,
                       cfg: SolverConfig, ctx: ProblemContext) -> np.ndarray:
    """Bulk temperature residual (N,)."""
    _check(prev, cand, tau, ctx)
    c = ctx.constitutive
    th, ts = cand.theta, cand.theta_s
    r = ctx.mass * (th - trunc_eps(cfg.eps, prev.theta)) / tau
    rate = (cand.u - prev.u) / tau
    r -= positive_part(th) * (ctx.P_div @ rate.ravel())
    a = alpha_M(c, cfg.M, th[ctx.tri].mean(axis=1))
    r += ctx.stiffness_apply(a, th)
    s = ctx.strain(rate)
    r -= ctx.lump(np.einsum("ei,ij,ej->e", s, ctx.D_V, s))
    b, w = ctx.bidx, ctx.w
    chi0p = positive_part(prev.chi)
    tb = th[b]
    Tb = trunc_eps(cfg.eps, tb)
    J1 = ctx.Kj @ chi0p
    J2 = ctx.Kj @ (chi0p * ts)
    r[b] += w * (c.k_value(prev.chi) * Tb * (tb - ts) + J1 * chi0p * tb * Tb - J2 * chi0p * Tb)
    r -= ctx.mass * data.h
    return r


def residual_momentum(prev: StateSnapshot, cand: StateSnapshot, data: StepData, tau: float,
                      cfg: SolverConfig, ctx: ProblemContext) -> np.ndarray:
    """Momentum residual (N, 2); rows of Dirichlet nodes are zero."""
    _check(prev, cand, tau, ctx)
    if cfg.rho > 0 and not cfg.omega > 4:
        raise ConfigError("omega>4", f"exponent omega must exceed 4, got {cfg.omega}")
    u = cand.u
    rate = (u - prev.u) / tau
    R = ctx.K_V @ rate.ravel() + ctx.K_E @ u.ravel()
    if cfg.rho > 0:
        s = ctx.strain(rate)
        coef = cfg.rho * ctx.areas * np.sum(s * s, axis=1) ** ((cfg.omega - 2) / 2)
        R += ctx.B_globT @ (coef[:, None] * s).ravel()
    R += ctx.P_div.T @ positive_part(cand.theta)
    R = R.reshape(-1, 2)
    b, w, n = ctx.bidx, ctx.w, ctx.normal
    chip = positive_part(cand.chi)
    ub = u[b]
    Jc = ctx.Kj @ chip
    zeta = yosida(ctx.constitutive.eta, cfg.varsigma, ub @ n)
    R[b] += w[:, None] * ((chip + Jc * chip)[:, None] * ub + zeta[:, None] * n[None, :])
    R -= data.F
    R[~ctx.free] = 0.0
    return R


def residual_surface_heat(prev: StateSnapshot, cand: StateSnapshot, data: StepData, tau: float,
                          cfg: SolverConfig, ctx: ProblemContext) -> np.ndarray:
    """Surface temperature residual (S,)."""
    _check(prev, cand, tau, ctx)
    c = ctx.constitutive
    ts, chi, chi0 = cand.theta_s, cand.chi, prev.chi
    w = ctx.w
    r = w * (ts - trunc_eps(cfg.eps, prev.theta_s)) / tau
    r -= w * positive_part(ts) * (c.lam(chi) - c.lam(chi0)) / tau
    a = alpha_M(c, cfg.M, 0.5 * (ts[:-1] + ts[1:]))
    r += ctx.surface_stiffness(a) @ ts
    r -= w * ((chi - chi0) / tau) ** 2
    chi0p = positive_part(chi0)
    tb = cand.theta[ctx.bidx]
    Ts = trunc_eps(cfg.eps, ts)
    r -= w * c.k_value(chi0) * (tb - ts) * Ts
    r -= w * (ctx.Kj @ (chi0p * tb)) * chi0p * Ts
    r += w * (ctx.Kj @ chi0p) * chi0p * ts * Ts
    r -= w * data.ell
    return r


def flow_rule_parts(prev: StateSnapshot, cand: StateSnapshot, data: StepData, tau: float,
                    cfg: SolverConfig, ctx: ProblemContext):
    """Split the flow-rule residual into the single-valued part ``F`` and the
    nonnegative coefficient ``g`` of the positive-part selection, so that the
    residual is ``F + sigma * g``."""
    _check(prev, cand, tau, ctx)
    c = ctx.constitutive
    chi, chi0 = cand.chi, prev.chi
    w = ctx.w
    d = (chi - chi0) / tau
    tsp = positive_part(cand.theta_s)
    val = d + yosida(c.beta, cfg.varsigma, chi) + c.gam_nu_prime(chi) - c.nu * chi0
    val = val + c.lam_delta_prime(chi0) * tsp + c.delta * chi * tsp
    if cfg.rho > 0:
        val = val + cfg.rho * np.abs(d) ** (cfg.omega - 2) * d
    F = w * val + ctx.S_chi @ chi
    u0sq = np.sum(prev.u[ctx.bidx] ** 2, axis=1)
    g = 0.5 * w * (u0sq + (ctx.Kj @ positive_part(chi)) * u0sq + ctx.Kj @ (positive_part(chi0) * u0sq))
    return F, g


def residual_flow_rule(prev: StateSnapshot, cand: StateSnapshot, data: StepData, tau: float,
                       cfg: SolverConfig, ctx: ProblemContext, sigma=None) -> np.ndarray:
    """Flow-rule residual (S,) with ``sigma`` from the candidate, else
    ``sigma_select(chi)``."""
    F, g = flow_rule_parts(prev, cand, data, tau, cfg, ctx)
    if sigma is None:
        sigma = cand.sigma if cand.sigma is not None else sigma_select(cand.chi)
    return F + sigma * g


def flow_rule_semismooth(F, g, chi, tau, w):
    """Prox reformulation of ``0 in F + g * d(positive part)(chi)``.

    Returns the residual (scaled like the flow rule), the active regime per
    node (+1: chi > 0 branch, -1: chi < 0 branch, 0: pinned at chi = 0) and
    the recovered selection sigma.
    """
    q = w * chi / tau - F
    regime = np.where(q > g, 1, np.where(q < 0, -1, 0))
    res = np.where(regime == 1, F + g, np.where(regime == -1, F, w * chi / tau))
    with np.errstate(divide="ignore", invalid="ignore"):
        pinned = np.where(g > 0, np.clip(-F / np.where(g > 0, g, 1.0), 0.0, 1.0), 1.0)
    sigma = np.where(regime == 1, 1.0, np.where(regime == -1, 0.0, pinned))
    return res, regime, sigma


def selections(cand: StateSnapshot, cfg: SolverConfig, ctx: ProblemContext):
    """``(zeta, xi)`` from the candidate displacement and adhesion fields."""
    n = ctx.normal
    un = cand.u[ctx.bidx] @ n
    zeta = yosida(ctx.constitutive.eta, cfg.varsigma, un)[:, None] * n[None, :]
    xi = yosida(ctx.constitutive.beta, cfg.varsigma, cand.chi)
    return zeta, xi


def all_residuals(prev, cand, data, tau, cfg, ctx, sigma=None) -> dict:
    return {
        "theta": residual_bulk_heat(prev, cand, data, tau, cfg, ctx),
        "u": residual_momentum(prev, cand, data, tau, cfg, ctx),
        "theta_s": residual_surface_heat(prev, cand, data, tau, cfg, ctx),
        "chi": residual_flow_rule(prev, cand, data, tau, cfg, ctx, sigma=sigma),
    }


# ---------------------------------------------------------------------------
# diagonal Jacobian blocks (used by the block iteration)

def jac_bulk_heat(prev, cand, data, tau, cfg, ctx) -> sp.csr_matrix:
    """d residual_bulk_heat / d theta."""
    c = ctx.constitutive
    th, ts = cand.theta, cand.theta_s
    rate = (cand.u - prev.u) / tau
    diag = ctx.mass / tau - heaviside(th) * (ctx.P_div @ rate.ravel())
    thc = th[ctx.tri].mean(axis=1)
    a = alpha_M(c, cfg.M, thc)
    da = alpha_M_derivative(c, cfg.M, thc)
    Lt = np.einsum("eab,eb->ea", ctx.st_local, th[ctx.tri])
    local = a[:, None, None] * ctx.st_local + (da / 3.0)[:, None, None] * Lt[:, :, None]
    A = ctx.st_pattern.matrix(local)
    b, w = ctx.bidx, ctx.w
    chi0p = positive_part(prev.chi)
    tb = th[b]
    Tb = trunc_eps(cfg.eps, tb)
    dT = trunc_eps_derivative(cfg.eps, tb)
    J1 = ctx.Kj @ chi0p
    J2 = ctx.Kj @ (chi0p * ts)
    k0 = c.k_value(prev.chi)
    diag[b] += w * (k0 * (dT * (tb - ts) + Tb) + J1 * chi0p * (Tb + tb * dT) - J2 * chi0p * dT)
    return (A + sp.diags(diag)).tocsr()


def jac_momentum(prev, cand, data, tau, cfg, ctx) -> sp.csr_matrix:
    """d residual_momentum / d u restricted to the free dofs ``ctx.free_dofs``."""
    u = cand.u
    local = ctx.linear_momentum_local(tau)
    if cfg.rho > 0:
        s = ctx.strain((u - prev.u) / tau)
        n2 = np.sum(s * s, axis=1)
        p = cfg.omega - 2
        c1 = n2 ** (p / 2)
        c2 = p * n2 ** ((p - 2) / 2)
        T = c1[:, None, None] * np.eye(3)[None] + c2[:, None, None] * np.einsum("ei,ej->eij", s, s)
        local = local + (cfg.rho * ctx.areas / tau)[:, None, None] * np.einsum("eai,eab,ebj->eij", ctx.B, T, ctx.B)
    b, w, n = ctx.bidx, ctx.w, ctx.normal
    chip = positive_part(cand.chi)
    cc = w * (chip + (ctx.Kj @ chip) * chip)
    dz = w * yosida_derivative(ctx.constitutive.eta, cfg.varsigma, u[b] @ n)
    cloc = cc[:, None, None] * np.eye(2)[None] + dz[:, None, None] * np.outer(n, n)[None]
    return ctx.uc_pattern.matrix(np.concatenate([local.ravel(), cloc.ravel()]))


def jac_surface_heat(prev, cand, data, tau, cfg, ctx) -> np.ndarray:
    """d residual_surface_heat / d theta_s (dense)."""
    c = ctx.constitutive
    ts, chi, chi0 = cand.theta_s, cand.chi, prev.chi
    w = ctx.w
    diag = w / tau - w * heaviside(ts) * (c.lam(chi) - c.lam(chi0)) / tau
    mid = 0.5 * (ts[:-1] + ts[1:])
    a = alpha_M(c, cfg.M, mid)
    da = alpha_M_derivative(c, cfg.M, mid)
    A = ctx.surface_stiffness(a)
    g = (ts[:-1] - ts[1:]) / ctx.h_s * da * 0.5
    i = np.arange(ctx.S - 1)
    A[i, i] += g
    A[i, i + 1] += g
    A[i + 1, i] -= g
    A[i + 1, i + 1] -= g
    chi0p = positive_part(chi0)
    tb = cand.theta[ctx.bidx]
    Ts = trunc_eps(cfg.eps, ts)
    dT = trunc_eps_derivative(cfg.eps, ts)
    J1 = ctx.Kj @ chi0p
    J3 = ctx.Kj @ (chi0p * tb)
    k0 = c.k_value(chi0)
    diag += -w * k0 * (-Ts + (tb - ts) * dT) - w * J3 * chi0p * dT + w * J1 * chi0p * (Ts + ts * dT)
    A[np.diag_indices(ctx.S)] += diag
    return A


def jac_flow_rule_parts(prev, cand, data, tau, cfg, ctx):
    """Jacobians of ``F`` and ``g`` from :func:`flow_rule_parts` in chi (dense)."""
    c = ctx.constitutive
    chi, chi0 = cand.chi, prev.chi
    w = ctx.w
    d = (chi - chi0) / tau
    tsp = positive_part(cand.theta_s)
    dv = 1.0 / tau + yosida_derivative(c.beta, cfg.varsigma, chi) + c.gam_nu_second(chi) + c.delta * tsp
    if cfg.rho > 0:
        dv = dv + cfg.rho * (cfg.omega - 1) * np.abs(d) ** (cfg.omega - 2) / tau
    dF = ctx.S_chi + np.diag(w * dv)
    u0sq = np.sum(prev.u[ctx.bidx] ** 2, axis=1)
    dg = (0.5 * w * u0sq)[:, None] * ctx.Kj * heaviside(chi)[None, :]
    return dF, dg
