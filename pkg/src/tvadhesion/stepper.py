"""Implicit time stepping: block fixed-point solver, Newton oracle, trajectories."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import (ProblemContext, flow_rule_parts, flow_rule_semismooth, jac_bulk_heat,
                       jac_flow_rule_parts, jac_momentum, jac_surface_heat, residual_bulk_heat,
                       residual_momentum, residual_surface_heat, selections)
from .energy import EnergyReport, energy_inequality_residual
from .monotone import sigma_select
from .state import ConfigError, SolverConfig, StateSnapshot, StepData, TimeGrid

log = logging.getLogger(__name__)

_GAUSS_X = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GAUSS_W = np.array([5.0, 8.0, 5.0]) / 18.0


class StepFailure(RuntimeError):
    def __init__(self, message: str, k: int = -1):
        super().__init__(message if k < 0 else f"step {k}: {message}")
        self.k = k


@dataclass(frozen=True, eq=False)
class InitialData:
    """Initial fields; ``theta_star``/``theta_s_star`` default to the minima."""

    theta: np.ndarray
    u: np.ndarray
    theta_s: np.ndarray
    chi: np.ndarray
    theta_star: Optional[float] = None
    theta_s_star: Optional[float] = None

    def validate(self, ctx: ProblemContext) -> "InitialData":
        ctx.check_state(self.snapshot(ctx, SolverConfig()))
        ts = self.theta_star if self.theta_star is not None else float(np.min(self.theta))
        tss = self.theta_s_star if self.theta_s_star is not None else float(np.min(self.theta_s))
        if not ts > 0 or np.min(self.theta) < ts:
            raise ConfigError("cond-teta0", f"initial bulk temperature must be >= theta* > 0 (min {np.min(self.theta):.6g})")
        if not tss > 0 or np.min(self.theta_s) < tss:
            raise ConfigError("cond-tetaso", f"initial surface temperature must be >= theta_s* > 0 (min {np.min(self.theta_s):.6g})")
        if np.any(np.asarray(self.u)[ctx.bulk.dirichlet_nodes] != 0):
            raise ConfigError("cond-u0", "initial displacement must vanish on Dirichlet nodes")
        if np.any(self.chi < 0) or np.any(self.chi > 1):
            raise ConfigError("cond-chi0", "initial adhesion parameter must lie in [0, 1]")
        return self

    def snapshot(self, ctx: ProblemContext, cfg: SolverConfig) -> StateSnapshot:
        s = StateSnapshot(np.array(self.theta, float), np.array(self.u, float),
                          np.array(self.theta_s, float), np.array(self.chi, float), k=0, time=0.0)
        ctx.check_state(s)
        zeta, xi = selections(s, cfg, ctx)
        return s.replace(sigma=sigma_select(s.chi), zeta=zeta, xi=xi)

    @classmethod
    def uniform(cls, ctx: ProblemContext, theta=1.0, theta_s=1.0, chi=1.0) -> "InitialData":
        return cls(np.full(ctx.N, float(theta)), np.zeros((ctx.N, 2)), np.full(ctx.S, float(theta_s)),
                   np.full(ctx.S, float(chi)))


@dataclass(frozen=True)
class Loads:
    """Time-dependent loads as callables ``(points (n, 2), t) -> values``.

    ``h`` on bulk nodes, ``ell`` on contact nodes, ``f`` body force and ``g``
    traction (both (n, 2)); ``g`` only acts on Neumann nodes.
    """

    h: Optional[Callable] = None
    ell: Optional[Callable] = None
    f: Optional[Callable] = None
    g: Optional[Callable] = None


def _eval(fn, pts, t, shape):
    if fn is None:
        return np.zeros(shape)
    return np.broadcast_to(np.asarray(fn(pts, t), dtype=float), shape)


def local_means(loads: Loads, grid: TimeGrid, k: int, ctx: ProblemContext) -> StepData:
    """Interval means of the loads on ``[t_{k-1}, t_k]`` (3-point Gauss rule)."""
    if not 1 <= k <= grid.K:
        raise ConfigError("time-grid", f"step index {k} outside 1..{grid.K}")
    return interval_means(loads, grid.t(k - 1), grid.t(k), ctx)


def interval_means(loads: Loads, t0: float, t1: float, ctx: ProblemContext) -> StepData:
    pts = ctx.bulk.nodes
    spts = pts[ctx.bidx]
    mid, half = 0.5 * (t0 + t1), 0.5 * (t1 - t0)
    h = np.zeros(ctx.N)
    ell = np.zeros(ctx.S)
    f = np.zeros((ctx.N, 2))
    g = np.zeros((ctx.N, 2))
    for x, wq in zip(_GAUSS_X, _GAUSS_W):
        t = mid + half * x
        h += wq * _eval(loads.h, pts, t, (ctx.N,))
        ell += wq * _eval(loads.ell, spts, t, (ctx.S,))
        f += wq * _eval(loads.f, pts, t, (ctx.N, 2))
        g += wq * _eval(loads.g, pts, t, (ctx.N, 2))
    for name, v in (("h", h), ("ell", ell), ("f", f), ("g", g)):
        if not np.all(np.isfinite(v)):
            raise ConfigError("cond-data", f"load {name} is not finite on [{t0}, {t1}]")
    return StepData(h=h, ell=ell, f=f, g=g, F=ctx.load_vector(f, g))


# ---------------------------------------------------------------------------
# nonlinear solvers

@dataclass
class StepReport:
    iterations: int
    residual: float
    residuals: dict
    converged: bool
    pinned: int = 0
    oracle_diff: Optional[float] = None
    oracle_flag: bool = False
    halvings: int = 0


def _maxabs(a) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def _newton(res, jac, x, tol, maxit, solve):
    """Damped Newton with backtracking on the max-norm."""
    r = res(x)
    nr = _maxabs(r)
    for _ in range(maxit):
        if nr <= tol or not np.isfinite(nr):
            break
        dx = solve(jac(x), -r)
        t = 1.0
        while True:
            xn = x + t * dx
            rn = res(xn)
            nn = _maxabs(rn)
            if nn < (1.0 - 1e-4 * t) * nr or t < 1e-3:
                break
            t *= 0.5
        x, r, nr = xn, rn, nn
    return x, nr


def _dense_solve(A, b):
    return np.linalg.solve(A, b)


def _sparse_solve(A, b):
    return spla.spsolve(A, b)


class _Block:
    """Residual evaluation with one unknown replaced."""

    def __init__(self, prev, data, tau, cfg, ctx):
        self.prev, self.data, self.tau, self.cfg, self.ctx = prev, data, tau, cfg, ctx

    def chi_residual(self, cand):
        F, g = flow_rule_parts(self.prev, cand, self.data, self.tau, self.cfg, self.ctx)
        return flow_rule_semismooth(F, g, cand.chi, self.tau, self.ctx.w)

    def chi_jacobian(self, cand):
        F, g = flow_rule_parts(self.prev, cand, self.data, self.tau, self.cfg, self.ctx)
        _, regime, _ = flow_rule_semismooth(F, g, cand.chi, self.tau, self.ctx.w)
        dF, dg = jac_flow_rule_parts(self.prev, cand, self.data, self.tau, self.cfg, self.ctx)
        J = np.where((regime == 1)[:, None], dF + dg, dF)
        pinned = regime == 0
        J[pinned] = 0.0
        J[pinned, pinned] = self.ctx.w[pinned] / self.tau
        return J

    def full(self, cand) -> dict:
        a = (self.prev, cand, self.data, self.tau, self.cfg, self.ctx)
        out = {}
        fz = self.ctx.frozen
        if "u" not in fz:
            out["u"] = residual_momentum(*a)
        if "chi" not in fz:
            out["chi"] = self.chi_residual(cand)[0]
        if "theta" not in fz:
            out["theta"] = residual_bulk_heat(*a)
        if "theta_s" not in fz:
            out["theta_s"] = residual_surface_heat(*a)
        return out


def _solve_u(blk: _Block, cand: StateSnapshot, tol, maxit):
    ctx = blk.ctx
    fd = ctx.free_dofs
    a = (blk.prev, None, blk.data, blk.tau, blk.cfg, ctx)

    def mk(x):
        v = cand.u.ravel().copy()
        v[fd] = x
        return cand.replace(u=v.reshape(-1, 2))

    def res(x):
        return residual_momentum(blk.prev, mk(x), *a[2:]).ravel()[fd]

    def jac(x):
        return jac_momentum(blk.prev, mk(x), *a[2:])

    x, _ = _newton(res, jac, cand.u.ravel()[fd], tol, maxit, _sparse_solve)
    return mk(x).u


def _solve_chi(blk: _Block, cand, tol, maxit):
    def res(x):
        return blk.chi_residual(cand.replace(chi=x))[0]

    def jac(x):
        return blk.chi_jacobian(cand.replace(chi=x))

    x, _ = _newton(res, jac, cand.chi.copy(), tol, maxit, _dense_solve)
    return x


def _solve_theta(blk: _Block, cand, tol, maxit):
    a = (blk.data, blk.tau, blk.cfg, blk.ctx)

    def res(x):
        return residual_bulk_heat(blk.prev, cand.replace(theta=x), *a)

    def jac(x):
        return jac_bulk_heat(blk.prev, cand.replace(theta=x), *a)

    x, _ = _newton(res, jac, cand.theta.copy(), tol, maxit, _sparse_solve)
    return x


def _solve_theta_s(blk: _Block, cand, tol, maxit):
    a = (blk.data, blk.tau, blk.cfg, blk.ctx)

    def res(x):
        return residual_surface_heat(blk.prev, cand.replace(theta_s=x), *a)

    def jac(x):
        return jac_surface_heat(blk.prev, cand.replace(theta_s=x), *a)

    x, _ = _newton(res, jac, cand.theta_s.copy(), tol, maxit, _dense_solve)
    return x


def _finish(prev, cand, blk: _Block, k, t):
    """Attach selections to a converged candidate."""
    ctx, cfg = blk.ctx, blk.cfg
    if "chi" in ctx.frozen:
        sigma = sigma_select(cand.chi)
        pinned = 0
    else:
        _, regime, sigma = blk.chi_residual(cand)
        pinned = int(np.sum(regime == 0))
    zeta, xi = selections(cand, cfg, ctx)
    return cand.replace(sigma=sigma, zeta=zeta, xi=xi, k=k, time=t), pinned


def picard_step(prev: StateSnapshot, data: StepData, tau: float, cfg: SolverConfig,
                ctx: ProblemContext):
    """Damped block fixed-point iteration in the order u, chi, theta, theta_s.

    Each block is solved by Newton's method with the other unknowns frozen.
    Returns ``(candidate, iterations, residual_norm, residuals)``.
    """
    blk = _Block(prev, data, tau, cfg, ctx)
    cand = prev.replace(sigma=None)
    fz = ctx.frozen
    dmp = cfg.damping
    res = blk.full(cand)
    nr = max((_maxabs(v) for v in res.values()), default=0.0)
    it = 0
    while nr > cfg.tol and it < cfg.max_iter:
        it += 1
        # block solves only need to beat the current coupled residual
        inner = max(0.1 * cfg.tol, 1e-3 * nr)
        if "u" not in fz:
            u = _solve_u(blk, cand, inner, cfg.inner_max_iter)
            cand = cand.replace(u=cand.u + dmp * (u - cand.u))
        if "chi" not in fz:
            x = _solve_chi(blk, cand, inner, cfg.inner_max_iter)
            cand = cand.replace(chi=cand.chi + dmp * (x - cand.chi))
        if "theta" not in fz:
            x = _solve_theta(blk, cand, inner, cfg.inner_max_iter)
            cand = cand.replace(theta=cand.theta + dmp * (x - cand.theta))
        if "theta_s" not in fz:
            x = _solve_theta_s(blk, cand, inner, cfg.inner_max_iter)
            cand = cand.replace(theta_s=cand.theta_s + dmp * (x - cand.theta_s))
        res = blk.full(cand)
        nr = max((_maxabs(v) for v in res.values()), default=0.0)
        if not np.isfinite(nr):
            break
    return cand, it, nr, res


# ---------------------------------------------------------------------------
# monolithic finite-difference Newton oracle

def _pack(ctx, s: StateSnapshot) -> np.ndarray:
    parts = []
    fz = ctx.frozen
    if "theta" not in fz:
        parts.append(s.theta)
    if "u" not in fz:
        parts.append(s.u.ravel()[ctx.free_dofs])
    if "theta_s" not in fz:
        parts.append(s.theta_s)
    if "chi" not in fz:
        parts.append(s.chi)
    return np.concatenate(parts) if parts else np.zeros(0)


def _unpack(ctx, base: StateSnapshot, z) -> StateSnapshot:
    fz = ctx.frozen
    i = 0
    kw = {}
    if "theta" not in fz:
        kw["theta"] = z[i:i + ctx.N]
        i += ctx.N
    if "u" not in fz:
        v = base.u.ravel().copy()
        nf = len(ctx.free_dofs)
        v[ctx.free_dofs] = z[i:i + nf]
        kw["u"] = v.reshape(-1, 2)
        i += nf
    if "theta_s" not in fz:
        kw["theta_s"] = z[i:i + ctx.S]
        i += ctx.S
    if "chi" not in fz:
        kw["chi"] = z[i:i + ctx.S]
    return base.replace(**kw)


def fd_newton_step(prev: StateSnapshot, data: StepData, tau: float, cfg: SolverConfig,
                   ctx: ProblemContext, x0: StateSnapshot | None = None, tol: float | None = None,
                   maxit: int = 100):
    """Monolithic Newton on the full coupled residual with a central
    finite-difference Jacobian.  Meant as an oracle on tiny meshes."""
    blk = _Block(prev, data, tau, cfg, ctx)
    base = prev if x0 is None else x0
    tol = 0.01 * cfg.tol if tol is None else tol
    fz = ctx.frozen

    def res(z):
        r = blk.full(_unpack(ctx, base, z))
        parts = []
        if "theta" not in fz:
            parts.append(r["theta"])
        if "u" not in fz:
            parts.append(r["u"].ravel()[ctx.free_dofs])
        if "theta_s" not in fz:
            parts.append(r["theta_s"])
        if "chi" not in fz:
            parts.append(r["chi"])
        return np.concatenate(parts)

    def jac(z):
        n = len(z)
        J = np.empty((n, n))
        for j in range(n):
            h = 1e-6 * max(1.0, abs(z[j]))
            zp, zm = z.copy(), z.copy()
            zp[j] += h
            zm[j] -= h
            J[:, j] = (res(zp) - res(zm)) / (2 * h)
        return J

    z, nr = _newton(res, jac, _pack(ctx, base), tol, maxit, _dense_solve)
    return _unpack(ctx, base, z), nr


def step(prev: StateSnapshot, data: StepData, grid, cfg: SolverConfig, ctx: ProblemContext):
    """Advance one time step.  ``grid`` is a :class:`TimeGrid` or the step size.

    Returns ``(snapshot, StepReport)``; raises :class:`StepFailure` on
    non-convergence or a non-finite residual.
    """
    tau = grid.tau if isinstance(grid, TimeGrid) else float(grid)
    k = prev.k + 1
    cand, it, nr, res = picard_step(prev, data, tau, cfg, ctx)
    if not np.isfinite(nr):
        raise StepFailure("residual is not finite", k)
    if nr > cfg.tol:
        raise StepFailure(f"no convergence after {it} iterations (residual {nr:.3e})", k)
    blk = _Block(prev, data, tau, cfg, ctx)
    snap, pinned = _finish(prev, cand, blk, k, prev.time + tau)
    rep = StepReport(it, nr, {f: _maxabs(v) for f, v in res.items()}, True, pinned)
    if cfg.newton_check:
        oracle, onr = fd_newton_step(prev, data, tau, cfg, ctx)
        diff = max(_maxabs(oracle.theta - snap.theta), _maxabs(oracle.u - snap.u),
                   _maxabs(oracle.theta_s - snap.theta_s), _maxabs(oracle.chi - snap.chi))
        rep.oracle_diff = diff
        rep.oracle_flag = bool(diff > 1e-8 or onr > cfg.tol)
        if rep.oracle_flag:
            log.warning("step %d: fixed-point and Newton solutions differ by %.3e", k, diff)
    return snap, rep


# ---------------------------------------------------------------------------
# trajectories

KINDS = ("left-constant", "right-constant", "linear")


@dataclass(eq=False)
class Trajectory:
    grid: TimeGrid
    snapshots: list
    reports: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    data: list = field(default_factory=list)
    ctx: Optional[ProblemContext] = None

    def __len__(self):
        return len(self.snapshots)

    def field(self, name: str) -> np.ndarray:
        """Stack one field over all time nodes."""
        return np.stack([getattr(s, name) for s in self.snapshots])

    def interpolant(self, kind: str, t: float) -> StateSnapshot:
        return interpolant(self, kind, t)


def _blend(a: StateSnapshot, b: StateSnapshot, s: float, t: float) -> StateSnapshot:
    def mix(x, y):
        if x is None or y is None:
            return None
        return (1.0 - s) * x + s * y
    return StateSnapshot(mix(a.theta, b.theta), mix(a.u, b.u), mix(a.theta_s, b.theta_s),
                         mix(a.chi, b.chi), mix(a.sigma, b.sigma), mix(a.zeta, b.zeta),
                         mix(a.xi, b.xi), b.k if s > 0 else a.k, t)


def interpolant(traj: Trajectory, kind: str, t: float) -> StateSnapshot:
    """Left-constant (value k on (t_{k-1}, t_k]), right-constant (value k-1 on
    [t_{k-1}, t_k)) or piecewise-linear reconstruction at time ``t``."""
    g = traj.grid
    if kind not in KINDS:
        raise ValueError(f"unknown interpolant kind {kind!r}")
    if not 0.0 <= t <= g.T:
        raise ValueError(f"time {t} outside [0, {g.T}]")
    if t == 0.0:
        return traj.snapshots[0]
    x = t / g.tau
    if kind == "left-constant":
        return traj.snapshots[min(int(math.ceil(x - 1e-12)), g.K)]
    if kind == "right-constant":
        return traj.snapshots[min(int(math.floor(x + 1e-12)), g.K)]
    k = min(max(int(math.ceil(x - 1e-12)), 1), g.K)
    s = x - (k - 1)
    if abs(s - 1.0) <= 1e-12:
        return traj.snapshots[k]
    return _blend(traj.snapshots[k - 1], traj.snapshots[k], s, t)


def _advance(prev, loads, t0, t1, cfg, ctx, depth, data=None):
    """One interval, halving the step on failure; returns the snapshot, the
    combined report and the list of (prev, next, data, tau) substeps."""
    data = data if data is not None else interval_means(loads, t0, t1, ctx)
    try:
        snap, rep = step(prev, data, t1 - t0, cfg, ctx)
        return snap, rep, [(prev, snap, data, t1 - t0)]
    except StepFailure:
        if depth >= cfg.max_halvings:
            raise
    tm = 0.5 * (t0 + t1)
    p0 = prev
    s1, r1, sub1 = _advance(p0, loads, t0, tm, cfg, ctx, depth + 1)
    s1 = s1.replace(k=prev.k)
    s2, r2, sub2 = _advance(s1, loads, tm, t1, cfg, ctx, depth + 1)
    r2.iterations += r1.iterations
    r2.halvings = max(r1.halvings, r2.halvings) + 1
    return s2.replace(k=prev.k + 1, time=t1), r2, sub1 + sub2


def run(init: InitialData, grid: TimeGrid, loads: Loads, cfg: SolverConfig, ctx: ProblemContext,
        validate: bool = True, energy: bool = True, callback=None) -> Trajectory:
    """Solve all steps and collect snapshots, solver and energy reports."""
    if validate:
        init.validate(ctx)
    s = init.snapshot(ctx, cfg)
    traj = Trajectory(grid, [s], ctx=ctx)
    for k in range(1, grid.K + 1):
        data = local_means(loads, grid, k, ctx)
        try:
            nxt, rep, subs = _advance(s, loads, grid.t(k - 1), grid.t(k), cfg, ctx, 0, data)
        except StepFailure as e:
            raise StepFailure(str(e).split(": ", 1)[-1], k) from None
        nxt = nxt.replace(k=k, time=grid.t(k))
        traj.snapshots.append(nxt)
        traj.reports.append(rep)
        traj.data.append(data)
        if energy:
            reps = [energy_inequality_residual(p, q, d, t, cfg, ctx) for p, q, d, t in subs]
            traj.energy.append(reps[0] if len(reps) == 1 else _merge_energy(reps))
        if callback is not None:
            callback(k, s, nxt, rep)
        s = nxt
    return traj


def _merge_energy(reps) -> EnergyReport:
    first, last = reps[0], reps[-1]
    tot = {f: sum(getattr(r, f) for r in reps) for f in
           ("diss_rho_u", "diss_rho_chi", "exchange", "gap", "work_h", "work_ell", "work_F",
            "residual", "slack")}
    lhs = last.energy + tot["diss_rho_u"] + tot["diss_rho_chi"] + tot["exchange"] + tot["gap"]
    rhs = first.energy_prev + tot["work_h"] + tot["work_ell"] + tot["work_F"]
    return EnergyReport(last.energy, first.energy_prev, first.energy_prev_untruncated,
                        tot["diss_rho_u"], tot["diss_rho_chi"], tot["exchange"], tot["gap"],
                        tot["work_h"], tot["work_ell"], tot["work_F"], lhs, rhs, tot["residual"],
                        tot["slack"])
