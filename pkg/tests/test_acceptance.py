"""Acceptance criteria 1-9 at their stated tolerances and runtime budgets.

Each test records one PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion is reported rather than hidden.
"""
import time

import numpy as np
import pytest

from tvadhesion.diagnostics import convergence_study, empirical_rate
from tvadhesion.energy import check_proof_inequalities, proof_inequalities
from tvadhesion.geometry import build_rect_mesh
from tvadhesion.kernels import apply_J, assemble_kernel, exp_kernel
from tvadhesion.monotone import NON_PENETRATION, UNIT_INTERVAL, resolvent, yosida
from tvadhesion.scenarios import (manufactured_exact, manufactured_heat, random_problem,
                                  reference_problem)
from tvadhesion.stepper import local_means, run, step

EPS = np.finfo(float).eps


def test_criterion_1_kernel_laws(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_sym, pos_ok, bound_ok = 0.0, True, True
    pairs = 0
    while pairs < 10_000:
        n = int(rng.integers(1, 64))  # up to 64 contact nodes
        _, surf = build_rect_mesh(n, 1, rng.uniform(0.5, 2.0), 1.0)
        K = assemble_kernel(exp_kernel(rng.uniform(0, 5), rng.uniform(0.01, 5)), surf)
        w = K.weights
        U = rng.normal(size=(100, n + 1))
        V = rng.normal(size=(100, n + 1))
        JU, JV = U @ K.K.T, V @ K.K.T
        a, b = np.sum(w * JU * V, axis=1), np.sum(w * JV * U, axis=1)
        scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
        worst_sym = max(worst_sym, float(np.max(np.abs(a - b) / scale)))
        P = np.abs(U)
        pos_ok &= bool(np.all(P @ K.K.T >= 0))
        l1 = np.abs(U) @ w
        bound_ok &= bool(np.all(np.abs(JU) <= K.sup_norm * l1[:, None] * (1 + 64 * EPS)))
        pairs += len(U)
    assert np.allclose(apply_J(K, U[0]), JU[0], rtol=1e-15, atol=0)
    dt = time.perf_counter() - t0
    ok = worst_sym <= 1e-12 and pos_ok and bound_ok and dt < 5
    acceptance(1, ok, f"{pairs} pairs, symmetry defect {worst_sym:.2e}, positivity {pos_ok}, "
                      f"sup bound {bound_ok}, {dt:.2f}s")
    assert ok


def test_criterion_2_monotone_toolkit(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    ok = True
    for s in (1.0, 1e-1, 1e-3):
        x = rng.uniform(-5, 5, 10_000)
        y = rng.uniform(-5, 5, 10_000)
        for g in (NON_PENETRATION, UNIT_INTERVAL):
            bx, by = yosida(g, s, x), yosida(g, s, y)
            ok &= bool(np.all((bx - by) * (x - y) >= 0))
            # rounding in (x - J(x)) / s is absolute in |x|, not relative in |x - y|
            ulp = 4 * EPS * (np.abs(x) + np.abs(y) + 1) / s
            ok &= bool(np.all(np.abs(bx - by) <= np.abs(x - y) / s + ulp))
            J = resolvent(g, s, x)
            ok &= bool(np.all((J >= g.lower) & (J <= g.upper)))
            ok &= bool(np.all(np.abs(J + s * bx - x) <= 4 * EPS * np.maximum(1.0, np.abs(x))))
            # membership of the Yosida value in the graph at the resolvent
            inner = (J > g.lower) & (J < g.upper)
            ok &= bool(np.all(bx[inner] == 0))
            ok &= bool(np.all(bx[J == g.upper] >= 0)) and bool(np.all(bx[J == g.lower] <= 0))
    dt = time.perf_counter() - t0
    ok = ok and dt < 5
    acceptance(2, ok, f"3 x 2 x 10^4 samples, {dt:.2f}s")
    assert ok


@pytest.fixture(scope="module")
def random_suite():
    """Run the 100 randomized full-coupling scenarios once for criteria 3, 4 and 9."""
    t0 = time.perf_counter()
    out = dict(energy_fail=[], min_res_over_slack=np.inf, min_theta=np.inf, min_theta_s=np.inf,
               positive=True, proof_fail={}, steps=0)
    for seed in range(100):
        p = random_problem(seed)
        bad = set()

        def on_step(k, prev, nxt, rep, p=p, bad=bad):
            bad.update(check_proof_inequalities(proof_inequalities(prev, nxt, p.grid.tau, p.cfg, p.ctx),
                                                slack=1e-10))
        traj = run(p.init, p.grid, p.loads, p.cfg, p.ctx, callback=on_step)
        out["steps"] += len(traj.energy)
        for e in traj.energy:
            out["min_res_over_slack"] = min(out["min_res_over_slack"], e.residual / e.slack)
            if not e.ok:
                out["energy_fail"].append(seed)
        mt, ms = float(traj.field("theta").min()), float(traj.field("theta_s").min())
        out["min_theta"] = min(out["min_theta"], mt)
        out["min_theta_s"] = min(out["min_theta_s"], ms)
        # every scenario has theta*, theta_s* >= 0.1 and nonnegative sources
        assert p.params["theta_star"] >= 0.1 and p.params["theta_s_star"] >= 0.1
        out["positive"] &= mt > 0 and ms > 0
        if bad:
            out["proof_fail"][seed] = sorted(bad)
    out["runtime"] = time.perf_counter() - t0
    return out


def test_criterion_3_energy_inequality(random_suite, acceptance):
    r = random_suite
    ok = not r["energy_fail"] and r["runtime"] < 300
    acceptance(3, ok, f"100 scenarios, {r['steps']} steps, min residual/slack {r['min_res_over_slack']:.3g}, "
                      f"failures {sorted(set(r['energy_fail']))}, {r['runtime']:.1f}s")
    assert ok


def test_criterion_4_positivity(random_suite, acceptance):
    r = random_suite
    ok = r["min_theta"] >= -1e-10 and r["min_theta_s"] >= -1e-10 and r["positive"]
    acceptance(4, ok, f"min theta {r['min_theta']:.4g}, min theta_s {r['min_theta_s']:.4g}, "
                      f"strictly positive {r['positive']}")
    assert ok


def test_criterion_9_proof_inequalities(random_suite, acceptance):
    r = random_suite
    ok = not r["proof_fail"]
    acceptance(9, ok, f"{r['steps']} steps at slack 1e-10, violations {r['proof_fail'] or 'none'}")
    assert ok


def test_criterion_5_newton_oracle(acceptance):
    t0 = time.perf_counter()
    diffs = []
    for seed in range(50):
        p = random_problem(seed, nx=2, ny=1, K=8)
        s0 = p.init.snapshot(p.ctx, p.cfg)
        _, rep = step(s0, local_means(p.loads, p.grid, 1, p.ctx), p.grid, p.cfg.replace(newton_check=True),
                      p.ctx)
        diffs.append(rep.oracle_diff)
    dt = time.perf_counter() - t0
    worst = max(diffs)
    ok = worst <= 1e-8 and dt < 60
    acceptance(5, ok, f"50 scenarios on 2x1 cells, max difference {worst:.2e}, {dt:.1f}s")
    assert ok


def _max_error(nx, K, T):
    p = manufactured_heat(nx, K, T)
    traj = run(p.init, p.grid, p.loads, p.cfg, p.ctx, validate=False)
    return max(float(np.max(np.abs(s.theta - manufactured_exact(p.ctx, s.time)))) for s in traj.snapshots)


def test_criterion_6_manufactured_convergence(acceptance):
    t0 = time.perf_counter()
    # time ladder on a fine mesh, space ladder with tau = h^2
    T = 1.0
    Ks = [8, 16, 32, 64]
    et = [_max_error(128, K, T) for K in Ks]
    rt = empirical_rate([T / K for K in Ks], et)
    Ts = 0.25
    nxs = [4, 8, 16, 32]
    es = [_max_error(nx, int(round(Ts * nx * nx)), Ts) for nx in nxs]
    rs = empirical_rate([1.0 / n for n in nxs], es)
    # error constants e / (tau + h^2) stay bounded along both ladders
    C = [e / (T / K + (1 / 128) ** 2) for e, K in zip(et, Ks)]
    C += [e / (2.0 / n ** 2) for e, n in zip(es, nxs)]
    dt = time.perf_counter() - t0
    ok = 0.8 <= rt <= 1.2 and 1.7 <= rs <= 2.3 and max(C) <= 2 * min(C[:4]) + 2 * min(C[4:]) and dt < 120
    acceptance(6, ok, f"time rate {rt:.3f}, space rate {rs:.3f}, C(tau+h^2) constants "
                      f"{min(C):.3g}..{max(C):.3g}, {dt:.1f}s")
    assert ok


def test_criterion_7_a_priori_uniformity(acceptance):
    t0 = time.perf_counter()
    rep = convergence_study(lambda K: reference_problem(K=K), [16, 32, 64, 128, 256], "tau")
    dt = time.perf_counter() - t0
    bad = [n for n, u in rep.norm_uniform.items() if not u]
    growth = {}
    for n in rep.norm_uniform:
        v = [nr.entries()[n] for nr in rep.norms]
        growth[n] = v[-1] / max(v[:3]) - 1.0
    worst = max(growth, key=growth.get)
    ok = not bad and dt < 300
    acceptance(7, ok, f"{len(growth)} norms over tau = T/16..T/256, largest growth {worst} "
                      f"{100 * growth[worst]:+.2f}%, failing {bad or 'none'}, {dt:.1f}s")
    assert ok


def test_criterion_8_regularization_sweeps(acceptance):
    t0 = time.perf_counter()
    rho = convergence_study(lambda v: reference_problem(rho=v), [1e-1, 1e-2, 1e-3, 1e-4], "rho")
    sig = convergence_study(lambda v: reference_problem(rho=0.0, varsigma=v), [1e-1, 1e-2, 1e-3], "sigma")
    dt = time.perf_counter() - t0

    def growth(r):
        return r.sup_energy[-1] / max(r.sup_energy[:3]) - 1.0
    ok = (rho.energy_uniform and rho.all_monotone and sig.energy_uniform and sig.all_monotone
          and dt < 600)
    acceptance(8, ok, f"rho ladder: energy growth {100 * growth(rho):+.2f}%, monotone {rho.all_monotone}; "
                      f"sigma ladder: energy growth {100 * growth(sig):+.2f}%, monotone {sig.all_monotone}; "
                      f"{dt:.1f}s")
    assert ok
