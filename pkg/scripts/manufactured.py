"""Convergence rates on the manufactured linear heat problem with exact
solution cos(pi x) exp(-t).

    python scripts/manufactured.py
"""
import time

import numpy as np

from tvadhesion.diagnostics import empirical_rate
from tvadhesion.scenarios import manufactured_exact, manufactured_heat
from tvadhesion.stepper import run


def max_error(nx, K, T):
    p = manufactured_heat(nx, K, T)
    traj = run(p.init, p.grid, p.loads, p.cfg, p.ctx, validate=False)
    return max(float(np.max(np.abs(s.theta - manufactured_exact(p.ctx, s.time)))) for s in traj.snapshots)


def main():
    t0 = time.perf_counter()
    Ks = [8, 16, 32, 64]
    et = [max_error(128, K, 1.0) for K in Ks]
    print("time ladder (nx = 128, T = 1)")
    for K, e in zip(Ks, et):
        print(f"  K = {K:3d}  error {e:.4e}")
    print(f"  rate {empirical_rate([1.0 / K for K in Ks], et):.3f}")
    nxs = [4, 8, 16, 32]
    es = [max_error(nx, int(round(0.25 * nx * nx)), 0.25) for nx in nxs]
    print("space ladder (tau = h^2, T = 1/4)")
    for nx, e in zip(nxs, es):
        print(f"  nx = {nx:3d}  error {e:.4e}")
    print(f"  rate {empirical_rate([1.0 / n for n in nxs], es):.3f}")
    print(f"{time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
