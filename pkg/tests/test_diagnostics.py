import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tvadhesion.assembly import ProblemContext
from tvadhesion.constitutive import Constitutive
from tvadhesion.diagnostics import (DiagnosticsError, Grams, by_parts_defect, convergence_study,
                                    discrete_gronwall, empirical_rate, energy_balance,
                                    gronwall_extremal, interpolant_gaps, l2_time_difference,
                                    ladder_uniform, norm_report, positivity_report)
from tvadhesion.geometry import build_rect_mesh
from tvadhesion.monotone import SmoothFunction
from tvadhesion.scenarios import manufactured_heat
from tvadhesion.state import SolverConfig, StateSnapshot, TimeGrid
from tvadhesion.stepper import InitialData, Loads, Trajectory, interpolant, run

ZERO = SmoothFunction.zero()


def _ctx(nx=3, ny=2, width=1.0, c=None, frozen=()):
    bulk, surf = build_rect_mesh(nx, ny, width, 1.0)
    return ProblemContext.build(bulk, surf, c or Constitutive(), None, frozen)


def _traj(ctx, K, fields):
    """Trajectory from a function ``k -> (theta, u, theta_s, chi)``."""
    grid = TimeGrid(1.0, K)
    snaps = [StateSnapshot(*fields(k), k=k, time=grid.t(k)) for k in range(K + 1)]
    return Trajectory(grid, snaps, ctx=ctx)


def _const(ctx, K=4):
    return _traj(ctx, K, lambda k: (np.ones(ctx.N), np.zeros((ctx.N, 2)), np.ones(ctx.S),
                                    np.full(ctx.S, 0.5)))


def test_constant_trajectory_norms():
    ctx = _ctx()
    n = norm_report(_const(ctx))
    assert n.sup_theta_L1 == pytest.approx(1.0)
    assert n.theta_L2H1 == pytest.approx(1.0)
    assert n.u_LinfH1 == 0 and n.u_t_L2H1 == 0 and n.chi_t_L2L2 == 0
    assert n.sup_theta_s_L1 == pytest.approx(1.0)
    for p, v in n.recip_theta.items():
        assert v == pytest.approx(1.0)
    assert set(n.entries()) >= {"recip_theta_LinfL2", "recip_theta_s_LinfL8", "theta_pow_L2H1"}
    with pytest.raises(DiagnosticsError):
        norm_report(_const(ctx), nu=1.0)


def test_positivity_on_constant_and_flagged_trajectories():
    ctx = _ctx(4, 2, width=2.0)
    pos = positivity_report(_const(ctx))
    assert pos.min_theta == 1.0 and not pos.flag
    for p, v in pos.recip_theta.items():
        assert v == pytest.approx(2.0 ** (1 / p))
        assert pos.recip_theta_s[p] == pytest.approx(2.0 ** (1 / p))

    def fields(k):
        th = np.ones(ctx.N)
        if k == 2:
            th[3] = -1e-3
        return th, np.zeros((ctx.N, 2)), np.ones(ctx.S), np.zeros(ctx.S)
    pos = positivity_report(_traj(ctx, 4, fields))
    assert pos.flag and pos.argmin_step_theta == 2 and pos.recip_theta[2] == math.inf


def test_decoupled_heat_minimum_at_initial_time():
    c = Constitutive(kappa1=0.0, k=ZERO, lam=ZERO, gam=ZERO)
    ctx = _ctx(c=c, frozen=("u", "chi"))
    rng = np.random.default_rng(4)
    init = InitialData(rng.uniform(0.3, 1.0, ctx.N), np.zeros((ctx.N, 2)), np.ones(ctx.S),
                       np.full(ctx.S, 0.5))
    traj = run(init, TimeGrid(1.0, 8), Loads(h=lambda x, t: 0.5), SolverConfig(rho=0.0), ctx)
    pos = positivity_report(traj)
    assert pos.min_theta == pytest.approx(init.theta.min(), abs=1e-14)
    assert pos.argmin_step_theta == 0
    assert np.all(energy_balance(traj) >= -sum(e.slack for e in traj.energy))


def test_gronwall_examples():
    np.testing.assert_allclose(discrete_gronwall(np.zeros(5), 0.0, 1.0, 1.0), 1.0)
    assert discrete_gronwall(np.zeros(3), 0.1, 1.0, 2.0)[2] == pytest.approx(2 * math.exp(0.6))
    assert 2 * math.exp(0.6) == pytest.approx(3.6442, abs=5e-5)
    with pytest.raises(DiagnosticsError):
        discrete_gronwall(np.zeros(3), 0.6, 1.0, 2.0)


@given(b=st.floats(0, 0.45), Lam=st.floats(0, 10), n=st.integers(1, 100))
def test_gronwall_extremal_sequence_is_bounded(b, Lam, n):
    a = gronwall_extremal(n, b, Lam)
    lam = (1 + 1e-12) / (1.0 - b)
    bound = discrete_gronwall(a, b, Lam, lam)
    assert np.all(a <= bound * (1 + 1e-12) + 1e-300)


def test_gronwall_skips_sequences_outside_the_hypothesis():
    # a_1 = 100 > Lam + b a_1, so nothing is asserted and only the bound is returned
    np.testing.assert_allclose(discrete_gronwall([100.0], 0.0, 1.0, 1.0), [1.0])


@given(seed=st.integers(0, 2 ** 31), K=st.integers(1, 12))
def test_interpolant_gaps_hold(seed, K):
    ctx = _GAP_CTX
    rng = np.random.default_rng(seed)
    traj = _traj(ctx, K, lambda k: (rng.normal(size=ctx.N), rng.normal(size=(ctx.N, 2)),
                                    rng.normal(size=ctx.S), rng.normal(size=ctx.S)))
    for name in ("theta", "u", "theta_s", "chi"):
        assert interpolant_gaps(traj, name).holds()


_GAP_CTX = _ctx(2, 1)


def test_interpolant_gap_matches_sampled_integral():
    ctx = _GAP_CTX
    rng = np.random.default_rng(9)
    traj = _traj(ctx, 3, lambda k: (rng.normal(size=ctx.N), np.zeros((ctx.N, 2)), np.ones(ctx.S),
                                    np.zeros(ctx.S)))
    G = Grams.of(ctx).bulk_mass
    tau = traj.grid.tau
    tot = 0.0
    # Simpson is exact for the quadratic integrand on each interval
    for k in range(1, 4):
        t0 = (k - 1) * tau
        vals = []
        for s in (1e-9, 0.5, 1.0):
            t = t0 + s * tau
            d = interpolant(traj, "left-constant", t).theta - interpolant(traj, "linear", t).theta
            vals.append(float(d @ (G @ d)))
        tot += tau / 6 * (vals[0] + 4 * vals[1] + vals[2])
    assert interpolant_gaps(traj, "theta").l2_const_linear == pytest.approx(math.sqrt(tot), rel=1e-7)


@given(seed=st.integers(0, 2 ** 31), K=st.integers(1, 20))
def test_summation_by_parts(seed, K):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(K + 1, 5))
    H = rng.normal(size=(K + 1, 5))
    assert abs(by_parts_defect(L, H)) <= 1e-11 * (1 + np.abs(L).sum() * np.abs(H).max())


def test_l2_time_difference_matches_simpson():
    ctx = _GAP_CTX
    rng = np.random.default_rng(1)
    fine = _traj(ctx, 4, lambda k: (rng.normal(size=ctx.N), np.zeros((ctx.N, 2)), np.ones(ctx.S),
                                    np.zeros(ctx.S)))
    coarse = _traj(ctx, 2, lambda k: (rng.normal(size=ctx.N), np.zeros((ctx.N, 2)), np.ones(ctx.S),
                                      np.zeros(ctx.S)))
    G = Grams.of(ctx).bulk_mass
    tot = 0.0
    for k in range(1, 5):
        ts = [(k - 1) * 0.25, (k - 0.5) * 0.25, k * 0.25]
        v = []
        for t in ts:
            d = interpolant(fine, "linear", t).theta - interpolant(coarse, "linear", t).theta
            v.append(float(d @ (G @ d)))
        tot += 0.25 / 6 * (v[0] + 4 * v[1] + v[2])
    assert l2_time_difference(fine, coarse, "theta") == pytest.approx(math.sqrt(tot), rel=1e-12)
    with pytest.raises(DiagnosticsError):
        l2_time_difference(fine, _traj(ctx, 3, lambda k: (np.ones(ctx.N), np.zeros((ctx.N, 2)),
                                                           np.ones(ctx.S), np.zeros(ctx.S))), "theta")


def test_ladder_helpers():
    assert ladder_uniform([1.0, 1.01, 0.99, 1.04])
    assert not ladder_uniform([1.0, 1.01, 0.99, 1.2])
    with pytest.raises(DiagnosticsError):
        ladder_uniform([1.0, 1.0])
    h = np.array([0.1, 0.05, 0.025])
    assert empirical_rate(h, 3 * h ** 2) == pytest.approx(2.0)


def test_constant_trajectory_gives_zero_differences():
    c = Constitutive(lam=ZERO)
    bulk, surf = build_rect_mesh(3, 2)
    ctx = ProblemContext.build(bulk, surf, c, None, ("u",))

    def make(K):
        return SimpleNamespace(ctx=ctx, init=InitialData.uniform(ctx, 1.0, 1.0, 0.5), grid=TimeGrid(1.0, K),
                               loads=Loads(), cfg=SolverConfig())
    rep = convergence_study(make, [2, 4, 8], "tau")
    assert all(v == 0 for d in rep.diffs.values() for v in d)
    assert rep.all_monotone and rep.energy_uniform
    with pytest.raises(DiagnosticsError):
        convergence_study(make, [2, 4], "tau")
    with pytest.raises(DiagnosticsError):
        convergence_study(make, [2, 4, 8], "space")


def test_manufactured_norms_match_closed_form():
    nx, K = 64, 64
    p = manufactured_heat(nx, K)
    traj = run(p.init, p.grid, p.loads, p.cfg, p.ctx, validate=False)
    n = norm_report(traj)
    H = 1.0 / nx
    tau = p.grid.tau
    # left-constant sum of exp(-2 t_k) times the exact space integral of the solution
    tsum = tau * sum(math.exp(-2 * k * tau) for k in range(1, K + 1))
    exact = math.sqrt(tsum * H * (0.5 + 0.5 * math.pi ** 2))
    assert n.theta_L2H1 == pytest.approx(exact, rel=2e-2)
    assert n.sup_theta_L1 == pytest.approx(2 / math.pi * H, rel=1e-3)
