"""Stored energies, the per-step discrete energy inequality and the
convexity inequalities that add up to it."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import geometry
from .assembly import ProblemContext
from .constitutive import coercivity_constant
from .monotone import (envelope, positive_part, sigma_select, trunc_eps, yosida)
from .state import SolverConfig, StateSnapshot, StepData


def _e_form(ctx, u, w=None):
    a = np.asarray(u).ravel()
    b = a if w is None else np.asarray(w).ravel()
    return float(a @ (ctx.K_E @ b))


def _adhesion(ctx, chi, u):
    """``1/2 sum w (chi |u|^2 + chi |u|^2 J(chi))``."""
    usq = np.sum(u[ctx.bidx] ** 2, axis=1)
    return 0.5 * float(np.sum(ctx.w * (chi * usq + chi * usq * (ctx.Kj @ chi))))


def stored_energy(state: StateSnapshot, ctx: ProblemContext) -> float:
    """Unregularized stored energy; ``inf`` for infeasible ``u`` or ``chi``."""
    c = ctx.constitutive
    un = state.u[ctx.bidx] @ ctx.normal
    eta = c.eta.potential(un)
    W = c.beta.potential(state.chi) + c.gam(state.chi)
    if not (np.all(np.isfinite(eta)) and np.all(np.isfinite(W))):
        return math.inf
    chi = state.chi
    return (float(ctx.mass @ state.theta) + float(ctx.w @ state.theta_s)
            + 0.5 * _e_form(ctx, state.u) + float(ctx.w @ eta) + _adhesion(ctx, chi, state.u)
            + 0.5 * float(chi @ ctx.S_chi @ chi) + float(ctx.w @ W))


def stored_energy_reg(state: StateSnapshot, varsigma: float, ctx: ProblemContext) -> float:
    """Regularized stored energy with Moreau envelopes and positive parts."""
    if not varsigma > 0:
        raise ValueError(f"Yosida parameter must be positive, got {varsigma}")
    c = ctx.constitutive
    un = state.u[ctx.bidx] @ ctx.normal
    chi = state.chi
    chip = positive_part(chi)
    W = envelope(c.beta, varsigma, chi) + c.gam(chi)
    return (float(ctx.mass @ state.theta) + float(ctx.w @ state.theta_s)
            + 0.5 * _e_form(ctx, state.u) + float(ctx.w @ envelope(c.eta, varsigma, un))
            + _adhesion(ctx, chip, state.u) + 0.5 * float(chi @ ctx.S_chi @ chi) + float(ctx.w @ W))


@dataclass
class EnergyReport:
    """Terms of the discrete energy inequality for one step.

    ``residual = rhs - lhs`` should be nonnegative up to ``slack``.
    """

    energy: float
    energy_prev: float
    energy_prev_untruncated: float
    diss_rho_u: float
    diss_rho_chi: float
    exchange: float
    gap: float
    work_h: float
    work_ell: float
    work_F: float
    lhs: float
    rhs: float
    residual: float
    slack: float

    @property
    def ok(self) -> bool:
        return self.residual >= -self.slack

    def as_dict(self) -> dict:
        return asdict(self)


def slack_budget(cfg: SolverConfig, ctx: ProblemContext) -> float:
    return 10.0 * cfg.tol * (ctx.N + ctx.S)


def energy_inequality_residual(prev: StateSnapshot, nxt: StateSnapshot, data: StepData, tau: float,
                               cfg: SolverConfig, ctx: ProblemContext) -> EnergyReport:
    c = ctx.constitutive
    vs = cfg.varsigma
    E1 = stored_energy_reg(nxt, vs, ctx)
    prev_t = prev.replace(theta=trunc_eps(cfg.eps, prev.theta), theta_s=trunc_eps(cfg.eps, prev.theta_s))
    E0 = stored_energy_reg(prev_t, vs, ctx)
    E0u = stored_energy_reg(prev, vs, ctx)
    du = nxt.u - prev.u
    dchi = nxt.chi - prev.chi
    if cfg.rho > 0:
        s = ctx.strain(du / tau)
        d_u = cfg.rho * tau * float(ctx.areas @ np.sum(s * s, axis=1) ** (cfg.omega / 2))
        d_chi = cfg.rho * tau * float(ctx.w @ np.abs(dchi / tau) ** cfg.omega)
    else:
        d_u = d_chi = 0.0
    tb = nxt.theta[ctx.bidx]
    ts = nxt.theta_s
    Tb, Ts = trunc_eps(cfg.eps, tb), trunc_eps(cfg.eps, ts)
    exch = tau * float(ctx.w @ (c.k_value(prev.chi) * (tb - ts) * (Tb - Ts)))
    chi0p = positive_part(prev.chi)
    Wk = ctx.w[:, None] * ctx.Kj * np.outer(chi0p, chi0p)
    gap = tau * float(np.sum(Wk * (tb[:, None] - ts[None, :]) * (Tb[:, None] - Ts[None, :])))
    wh = tau * float(ctx.mass @ data.h)
    wl = tau * float(ctx.w @ data.ell)
    wF = float(np.sum(data.F * du))
    lhs = E1 + d_u + d_chi + exch + gap
    rhs = E0 + wh + wl + wF
    return EnergyReport(E1, E0, E0u, d_u, d_chi, exch, gap, wh, wl, wF, lhs, rhs, rhs - lhs,
                        slack_budget(cfg, ctx))


# ---------------------------------------------------------------------------
# convexity inequalities behind the energy estimate

@dataclass
class Inequality:
    name: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs

    def holds(self, slack: float = 1e-10) -> bool:
        return self.margin >= -slack


def proof_inequalities(prev: StateSnapshot, nxt: StateSnapshot, tau: float, cfg: SolverConfig,
                       ctx: ProblemContext) -> list:
    """Evaluate each inequality ``lhs >= rhs`` used to derive the energy estimate.

    The returned list also contains two identities (``lhs == rhs``): the
    symmetry step of the third nonlocal inequality and the telescoped sum of
    the three nonlocal inequalities.
    """
    c = ctx.constitutive
    vs = cfg.varsigma
    w, b, n = ctx.w, ctx.bidx, ctx.normal
    u, u0 = nxt.u, prev.u
    chi, chi0 = nxt.chi, prev.chi
    dchi = chi - chi0
    sigma = nxt.sigma if nxt.sigma is not None else sigma_select(chi)
    out = []
    out.append(Inequality("elastic", _e_form(ctx, u, u - u0),
                          0.5 * _e_form(ctx, u) - 0.5 * _e_form(ctx, u0)))
    chip, chi0p = positive_part(chi), positive_part(chi0)
    usq = np.sum(u[b] ** 2, axis=1)
    u0sq = np.sum(u0[b] ** 2, axis=1)
    udu = np.sum(u[b] * (u[b] - u0[b]), axis=1)
    out.append(Inequality("adhesion", float(w @ (chip * udu + 0.5 * u0sq * sigma * dchi)),
                          0.5 * float(w @ (chip * usq - chi0p * u0sq))))
    un, un0 = u[b] @ n, u0[b] @ n
    out.append(Inequality("contact", float(w @ (yosida(c.eta, vs, un) * (un - un0))),
                          float(w @ (envelope(c.eta, vs, un) - envelope(c.eta, vs, un0)))))
    S = ctx.S_chi
    out.append(Inequality("gradient", float(chi @ S @ dchi),
                          0.5 * float(chi @ S @ chi) - 0.5 * float(chi0 @ S @ chi0)))
    out.append(Inequality("beta", float(w @ (yosida(c.beta, vs, chi) * dchi)),
                          float(w @ (envelope(c.beta, vs, chi) - envelope(c.beta, vs, chi0)))))
    tsp = positive_part(nxt.theta_s)
    out.append(Inequality("lambda", float(w @ (tsp * (c.lam_delta_prime(chi0) + c.delta * chi) * dchi)),
                          float(w @ (tsp * (c.lam(chi) - c.lam(chi0))))))
    out.append(Inequality("gamma", float(w @ ((c.gam_nu_prime(chi) - c.nu * chi0) * dchi)),
                          float(w @ (c.gam(chi) - c.gam(chi0)))))
    Jc = ctx.Kj @ chip
    Jc0 = ctx.Kj @ chi0p
    d1 = Inequality("nonlocal-1", float(w @ (Jc * chip * udu)),
                    0.5 * float(w @ (Jc * chip * usq)) - 0.5 * float(w @ (Jc * chip * u0sq)))
    d2 = Inequality("nonlocal-2", float(w @ (0.5 * Jc * sigma * dchi * u0sq)),
                    0.5 * float(w @ (Jc * chip * u0sq)) - 0.5 * float(w @ (Jc * chi0p * u0sq)))
    Ju = ctx.Kj @ (chi0p * u0sq)
    d3 = Inequality("nonlocal-3", float(w @ (0.5 * Ju * sigma * dchi)),
                    0.5 * float(w @ (Ju * (chip - chi0p))))
    out += [d1, d2, d3]
    out.append(Inequality("nonlocal-3-symmetry", 0.5 * float(w @ (Ju * (chip - chi0p))),
                          0.5 * float(w @ (Jc * chi0p * u0sq)) - 0.5 * float(w @ (Jc0 * chi0p * u0sq))))
    out.append(Inequality("nonlocal-sum", d1.rhs + d2.rhs + 0.5 * float(w @ (Jc * chi0p * u0sq))
                          - 0.5 * float(w @ (Jc0 * chi0p * u0sq)),
                          0.5 * float(w @ (Jc * chip * usq)) - 0.5 * float(w @ (Jc0 * chi0p * u0sq))))
    return out


IDENTITIES = ("nonlocal-3-symmetry", "nonlocal-sum")


def check_proof_inequalities(ineqs, slack: float = 1e-10) -> list:
    """Names of violated entries (identities are checked in both directions)."""
    bad = []
    for q in ineqs:
        if q.name in IDENTITIES:
            scale = max(1.0, abs(q.lhs), abs(q.rhs))
            if abs(q.margin) > max(slack, 1e-12 * scale):
                bad.append(q.name)
        elif not q.holds(slack):
            bad.append(q.name)
    return bad


# ---------------------------------------------------------------------------
# coercivity

@dataclass
class CoercivityConstants:
    C1: float
    C2: float
    C_e: float


def coercivity_constants(ctx: ProblemContext) -> CoercivityConstants:
    """Constants with ``E >= C1 (|theta|_1 + |theta_s|_1 + |u|_H1^2 + |chi|_H1^2) - C2``
    for admissible states (chi in [0, 1], nonpositive normal displacement).

    Since ``chi`` takes values in ``[0, 1]`` its L^2 norm is at most
    ``|Gamma_C|``, which replaces the Poincare step; hence the extra
    ``C1 |Gamma_C|`` in ``C2``.
    """
    C_e = coercivity_constant(ctx.constitutive, ctx.bulk, "e")
    C1 = min(1.0, 0.5 * C_e, 0.5)
    C2 = (ctx.constitutive.C_W + C1) * ctx.surface.measure
    return CoercivityConstants(C1, C2, C_e)


def h1_norm_sq_vector(ctx, u) -> float:
    G = geometry.vector_h1_gram(ctx.bulk)
    a = np.asarray(u).ravel()
    return float(a @ (G @ a))


def coercivity_monitor(state: StateSnapshot, ctx: ProblemContext, constants: CoercivityConstants | None = None):
    """Return ``(E, lower_bound, margin)``."""
    k = constants or coercivity_constants(ctx)
    E = stored_energy(state, ctx)
    chi = state.chi
    chi_h1 = float(chi @ ctx.surface.mass() @ chi) + float(chi @ ctx.S_chi @ chi)
    th1 = float(ctx.mass @ np.abs(state.theta))
    ts1 = float(ctx.w @ np.abs(state.theta_s))
    bound = k.C1 * (th1 + ts1 + h1_norm_sq_vector(ctx, state.u) + chi_h1) - k.C2
    return E, bound, E - bound
