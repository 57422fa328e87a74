"""Trajectory monitors: norm reports, positivity, discrete Gronwall, ladders.

Time norms are taken on the interpolants of a trajectory.  ``L^2(0,T;X)``
norms use the left-constant interpolant (steps ``k = 1..K``), ``L^inf``
norms include the initial snapshot.  Spatial ``L^1`` and reciprocal
``L^p`` norms use the lumped (vertex) rule, ``L^2`` and ``H^1`` norms the
consistent P1 Gram matrices.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import geometry
from .assembly import ProblemContext
from .energy import stored_energy_reg
from .stepper import StepFailure, Trajectory, run

FIELDS = ("theta", "u", "theta_s", "chi")
GROWTH_BUDGET = 0.05


class DiagnosticsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Gram matrices

@dataclass(eq=False)
class Grams:
    """L^2 and H^1 Gram matrices of the four unknowns on one mesh pair."""

    bulk_mass: sp.csr_matrix
    bulk_h1: sp.csr_matrix
    surf_mass: sp.csr_matrix
    surf_h1: sp.csr_matrix
    vec_mass: sp.csr_matrix
    vec_h1: sp.csr_matrix

    @classmethod
    def of(cls, ctx: ProblemContext) -> "Grams":
        cache = ctx._lin_cache
        if "grams" not in cache:
            b, s = ctx.bulk, ctx.surface
            Mb = geometry.scalar_mass(b)
            Ms = s.mass()
            cache["grams"] = cls(Mb, (Mb + geometry.scalar_stiffness(b)).tocsr(), Ms,
                                 (Ms + s.stiffness()).tocsr(), sp.kron(Mb, sp.eye(2)).tocsr(),
                                 geometry.vector_h1_gram(b))
        return cache["grams"]

    def l2(self, name: str) -> sp.csr_matrix:
        return {"theta": self.bulk_mass, "u": self.vec_mass, "theta_s": self.surf_mass,
                "chi": self.surf_mass}[name]


def _sq(G, v) -> float:
    v = np.asarray(v, dtype=float).ravel()
    return max(float(v @ (G @ v)), 0.0)


def _ctx(traj: Trajectory, ctx: Optional[ProblemContext]) -> ProblemContext:
    c = ctx if ctx is not None else traj.ctx
    if c is None:
        raise DiagnosticsError("trajectory carries no problem context; pass one explicitly")
    return c


# ---------------------------------------------------------------------------
# norm report

@dataclass
class NormReport:
    """Measured a priori quantities of one trajectory."""

    sup_theta_L1: float
    sup_theta_s_L1: float
    theta_L2H1: float
    theta_s_L2H1: float
    u_LinfH1: float
    u_t_L2H1: float
    chi_LinfH1: float
    chi_t_L2L2: float
    theta_pow_L2H1: float
    recip_theta: dict = field(default_factory=dict)
    recip_theta_s: dict = field(default_factory=dict)
    nu: float = 0.9

    def entries(self) -> dict:
        """Flat name -> value mapping of every monitored norm."""
        out = {k: v for k, v in asdict(self).items() if isinstance(v, float) and k != "nu"}
        for p, v in self.recip_theta.items():
            out[f"recip_theta_LinfL{p}"] = v
        for p, v in self.recip_theta_s.items():
            out[f"recip_theta_s_LinfL{p}"] = v
        return out

    def as_dict(self) -> dict:
        d = self.entries()
        d["nu"] = self.nu
        return d


def _recip(m, v, p) -> float:
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        return math.inf
    return float(m @ v ** (-float(p))) ** (1.0 / p)


def norm_report(traj: Trajectory, ctx: Optional[ProblemContext] = None, nu: float = 0.9,
                ps: Sequence[int] = (2, 4, 8)) -> NormReport:
    """Evaluate the monitored norms on an accepted trajectory."""
    if not 0.0 < nu < 1.0:
        raise DiagnosticsError(f"auxiliary exponent must lie in (0, 1), got {nu}")
    ctx = _ctx(traj, ctx)
    G = Grams.of(ctx)
    tau = traj.grid.tau
    snaps = traj.snapshots
    later = snaps[1:]
    mb, ms = ctx.mass, ctx.w
    expo = 0.5 * (ctx.constitutive.mu + nu)

    def l2t(G_, vals):
        return math.sqrt(tau * sum(_sq(G_, v) for v in vals))

    du = [(b.u - a.u) / tau for a, b in zip(snaps[:-1], snaps[1:])]
    dchi = [(b.chi - a.chi) / tau for a, b in zip(snaps[:-1], snaps[1:])]
    return NormReport(
        sup_theta_L1=max(float(mb @ np.abs(s.theta)) for s in snaps),
        sup_theta_s_L1=max(float(ms @ np.abs(s.theta_s)) for s in snaps),
        theta_L2H1=l2t(G.bulk_h1, [s.theta for s in later]),
        theta_s_L2H1=l2t(G.surf_h1, [s.theta_s for s in later]),
        u_LinfH1=max(math.sqrt(_sq(G.vec_h1, s.u)) for s in snaps),
        u_t_L2H1=l2t(G.vec_h1, du),
        chi_LinfH1=max(math.sqrt(_sq(G.surf_h1, s.chi)) for s in snaps),
        chi_t_L2L2=l2t(G.surf_mass, dchi),
        theta_pow_L2H1=l2t(G.bulk_h1, [np.maximum(s.theta, 0.0) ** expo for s in later]),
        recip_theta={int(p): max(_recip(mb, s.theta, p) for s in snaps) for p in ps},
        recip_theta_s={int(p): max(_recip(ms, s.theta_s, p) for s in snaps) for p in ps},
        nu=nu,
    )


# ---------------------------------------------------------------------------
# positivity

@dataclass
class PositivityReport:
    min_theta: float
    min_theta_s: float
    argmin_step_theta: int
    argmin_step_theta_s: int
    recip_theta: dict
    recip_theta_s: dict

    @property
    def flag(self) -> bool:
        """True when some temperature is not strictly positive."""
        return not (self.min_theta > 0 and self.min_theta_s > 0)


def positivity_report(traj: Trajectory, ps: Sequence[int] = (2, 4, 8),
                      ctx: Optional[ProblemContext] = None) -> PositivityReport:
    ctx = _ctx(traj, ctx)
    th = np.array([np.min(s.theta) for s in traj.snapshots])
    ts = np.array([np.min(s.theta_s) for s in traj.snapshots])
    return PositivityReport(
        float(th.min()), float(ts.min()), int(th.argmin()), int(ts.argmin()),
        {int(p): max(_recip(ctx.mass, s.theta, p) for s in traj.snapshots) for p in ps},
        {int(p): max(_recip(ctx.w, s.theta_s, p) for s in traj.snapshots) for p in ps},
    )


# ---------------------------------------------------------------------------
# discrete Gronwall

def discrete_gronwall(a, b: float, Lam: float, lam: float) -> np.ndarray:
    """Bounds ``lam * Lam * exp(lam * b * k)`` for ``k = 1..len(a)``.

    Requires ``1 - b >= 1/lam > 0``.  When ``a`` satisfies the recursive
    hypothesis ``a_k <= Lam + b * sum_{j<=k} a_j`` the bound is checked and a
    violation raises ``AssertionError``.
    """
    if not (lam > 0 and b >= 0 and Lam >= 0):
        raise DiagnosticsError("need lam > 0, b >= 0 and Lam >= 0")
    if not 1.0 - b >= 1.0 / lam:
        raise DiagnosticsError(f"Gronwall hypothesis 1 - b >= 1/lam fails (b={b}, lam={lam})")
    a = np.asarray(a, dtype=float).ravel()
    k = np.arange(1, len(a) + 1)
    bound = lam * Lam * np.exp(lam * b * k)
    if len(a) and np.all(a >= 0):
        hyp = a <= Lam + b * np.cumsum(a) + 1e-12 * np.maximum(1.0, np.abs(a))
        if np.all(hyp):
            bad = a > bound * (1 + 1e-12)
            if np.any(bad):
                raise AssertionError(f"Gronwall bound violated at k={int(k[bad][0])}")
    return bound


def gronwall_extremal(n: int, b: float, Lam: float) -> np.ndarray:
    """Sequence meeting ``a_k = Lam + b * sum_{j<=k} a_j`` with equality."""
    if not 0 <= b < 1:
        raise DiagnosticsError("need 0 <= b < 1")
    a = np.empty(n)
    s = 0.0
    for i in range(n):
        a[i] = (Lam + b * s) / (1.0 - b)
        s += a[i]
    return a


# ---------------------------------------------------------------------------
# interpolant checks

@dataclass
class InterpolantGaps:
    """Exact interpolant distances for one field in the L^2 space norm."""

    l2_const_linear: float
    l2_const_const: float
    l2_bound: float
    linf_const_linear: float
    linf_const_const: float
    linf_bound: float

    def holds(self, rtol: float = 1e-12) -> bool:
        e = 1.0 + rtol
        return (self.l2_const_linear <= self.l2_const_const * e + 1e-300
                and self.l2_const_const <= self.l2_bound * e + 1e-300
                and self.linf_const_linear <= self.linf_const_const * e + 1e-300
                and self.linf_const_const <= self.linf_bound * e + 1e-300)


def interpolant_gaps(traj: Trajectory, name: str, ctx: Optional[ProblemContext] = None) -> InterpolantGaps:
    """Distances between the left-constant, right-constant and linear
    interpolants and the ``tau``/``sqrt(tau)`` bounds by the time derivative.

    Per step ``d = h^k - h^{k-1}``: the constant interpolants differ by ``d``
    on the whole interval and the left-constant and linear ones by
    ``(1 - s) d`` (``s`` the local time fraction), whose square integrates to
    ``tau |d|^2 / 3``.
    """
    ctx = _ctx(traj, ctx)
    G = Grams.of(ctx).l2(name)
    tau = traj.grid.tau
    vals = traj.field(name)
    dsq = np.array([_sq(G, vals[k] - vals[k - 1]) for k in range(1, len(vals))])
    total = float(np.sum(dsq))
    return InterpolantGaps(
        l2_const_linear=math.sqrt(tau * total / 3.0),
        l2_const_const=math.sqrt(tau * total),
        l2_bound=tau * math.sqrt(total / tau),
        linf_const_linear=math.sqrt(float(dsq.max())) if len(dsq) else 0.0,
        linf_const_const=math.sqrt(float(dsq.max())) if len(dsq) else 0.0,
        linf_bound=math.sqrt(tau) * math.sqrt(total / tau),
    )


def by_parts_defect(loads, states) -> float:
    """Defect of the discrete summation-by-parts identity.

    ``loads`` and ``states`` are sequences ``l^0..l^K`` and ``h^0..h^K``;
    returns ``sum_i <l^i, h^i - h^{i-1}> - (<l^K, h^K> - <l^0, h^0>
    - sum_i <l^i - l^{i-1}, h^{i-1}>)``.
    """
    L = [np.asarray(x, dtype=float).ravel() for x in loads]
    H = [np.asarray(x, dtype=float).ravel() for x in states]
    if len(L) != len(H) or len(L) < 1:
        raise DiagnosticsError("need matching nonempty sequences")
    lhs = sum(float(L[i] @ (H[i] - H[i - 1])) for i in range(1, len(H)))
    rhs = (float(L[-1] @ H[-1]) - float(L[0] @ H[0])
           - sum(float((L[i] - L[i - 1]) @ H[i - 1]) for i in range(1, len(H))))
    return lhs - rhs


def energy_balance(traj: Trajectory) -> np.ndarray:
    """Cumulative ``rhs - lhs`` of the energy inequality over ``[0, t_k]``.

    Adjacent steps share their stored energy, so the sum telescopes into the
    interpolant form of the total balance.
    """
    return np.cumsum([e.residual for e in traj.energy])


# ---------------------------------------------------------------------------
# ladders

def ladder_uniform(values, budget: float = GROWTH_BUDGET) -> bool:
    """Finest value exceeds the max over the coarsest three by at most ``budget``."""
    v = np.asarray(values, dtype=float)
    if len(v) < 3:
        raise DiagnosticsError("a ladder needs at least 3 levels")
    ref = float(np.max(v[:3]))
    return bool(v[-1] <= ref * (1.0 + budget) + 1e-14)


def empirical_rate(steps, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(step)``."""
    s = np.log(np.asarray(steps, dtype=float))
    e = np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(s, e, 1)[0])


def l2_time_difference(fine: Trajectory, coarse: Trajectory, name: str,
                       ctx: Optional[ProblemContext] = None) -> float:
    """Exact ``L^2(0,T;L^2)`` distance of the piecewise-linear interpolants.

    The coarse grid must divide the fine one; the coarse interpolant is
    sampled at the fine nodes, so both are linear on every fine interval.
    """
    ctx = _ctx(fine, ctx)
    Kf, Kc = fine.grid.K, coarse.grid.K
    if Kf % Kc or not math.isclose(fine.grid.T, coarse.grid.T):
        raise DiagnosticsError(f"grids do not nest ({Kc} -> {Kf})")
    G = Grams.of(ctx).l2(name)
    r = Kf // Kc
    cf = coarse.field(name)
    ff = fine.field(name)
    idx = np.arange(Kf + 1)
    lo = np.minimum(idx // r, Kc - 1)
    s = (idx - lo * r) / r
    samp = cf[lo] * (1 - s).reshape((-1,) + (1,) * (cf.ndim - 1)) \
        + cf[lo + 1] * s.reshape((-1,) + (1,) * (cf.ndim - 1))
    d = [np.asarray(x).ravel() for x in ff - samp]
    tau = fine.grid.tau
    tot = 0.0
    for k in range(1, Kf + 1):
        a, b = d[k - 1], d[k]
        tot += tau / 3.0 * (_sq(G, a) + float(a @ (G @ b)) + _sq(G, b))
    return math.sqrt(max(tot, 0.0))


def sup_energy(traj: Trajectory, varsigma: float, ctx: Optional[ProblemContext] = None) -> float:
    ctx = _ctx(traj, ctx)
    return max(stored_energy_reg(s, varsigma, ctx) for s in traj.snapshots)


@dataclass
class ConvergenceReport:
    """Pairwise differences of consecutive ladder levels and derived rates."""

    ladder: str
    values: list
    diffs: dict
    rates: dict
    monotone: dict
    sup_energy: list
    energy_uniform: bool
    norms: list = field(default_factory=list)
    norm_uniform: dict = field(default_factory=dict)
    min_theta: list = field(default_factory=list)
    min_theta_s: list = field(default_factory=list)

    @property
    def all_monotone(self) -> bool:
        return all(self.monotone.values())

    def as_dict(self) -> dict:
        d = asdict(self)
        d["norms"] = [n.as_dict() for n in self.norms]
        d["all_monotone"] = self.all_monotone
        return d


LADDERS = ("tau", "rho", "sigma")


def _monotone(d) -> bool:
    return all(d[i + 1] <= d[i] * (1 + 1e-9) + 1e-13 for i in range(len(d) - 1))


def convergence_study(make: Callable, values: Sequence, ladder: str = "tau", threads: int = 1,
                      nu: float = 0.9, ps: Sequence[int] = (2, 4, 8)) -> ConvergenceReport:
    """Run one scenario along a ladder and compare consecutive levels.

    ``make(value)`` returns an object with ``ctx, init, grid, loads, cfg``
    attributes: ``value`` is the step count for the ``tau`` ladder and the
    parameter value for ``rho``/``sigma`` ladders (which share one grid).
    """
    if ladder not in LADDERS:
        raise DiagnosticsError(f"unknown ladder {ladder!r}, expected one of {LADDERS}")
    values = list(values)
    if len(values) < 3:
        raise DiagnosticsError("a ladder needs at least 3 levels")

    def level(v):
        p = make(v)
        try:
            tr = run(p.init, p.grid, p.loads, p.cfg, p.ctx, energy=False)
        except StepFailure as e:
            raise StepFailure(f"ladder level {v}: {e}", e.k) from None
        return p, tr

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(level, values))
    else:
        out = [level(v) for v in values]
    probs, trajs = [p for p, _ in out], [t for _, t in out]
    ctx = probs[-1].ctx
    diffs = {f: [] for f in FIELDS}
    for (pa, ta), (pb, tb) in zip(out[:-1], out[1:]):
        fine, coarse = (tb, ta) if tb.grid.K >= ta.grid.K else (ta, tb)
        for f in FIELDS:
            diffs[f].append(l2_time_difference(fine, coarse, f, ctx))
    if ladder == "tau":
        steps = [1.0 / v for v in values]
    else:
        steps = [float(v) for v in values]
    rates = {}
    for f, d in diffs.items():
        r = []
        for i in range(len(d) - 1):
            ratio = steps[i] / steps[i + 1]
            r.append(math.log(d[i] / d[i + 1]) / math.log(ratio)
                     if d[i] > 0 and d[i + 1] > 0 and ratio != 1 else math.nan)
        rates[f] = r
    sups = [sup_energy(t, p.cfg.varsigma, p.ctx) for p, t in out]
    norms = [norm_report(t, p.ctx, nu, ps) for p, t in out]
    names = norms[0].entries().keys()
    norm_uniform = {n: ladder_uniform([nr.entries()[n] for nr in norms]) for n in names}
    return ConvergenceReport(
        ladder=ladder, values=values, diffs=diffs, rates=rates,
        monotone={f: _monotone(d) for f, d in diffs.items()},
        sup_energy=sups, energy_uniform=ladder_uniform(sups), norms=norms, norm_uniform=norm_uniform,
        min_theta=[float(t.field("theta").min()) for t in trajs],
        min_theta_s=[float(t.field("theta_s").min()) for t in trajs],
    )
