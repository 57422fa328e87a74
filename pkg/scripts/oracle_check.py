"""Compare one fixed-point step against the finite-difference Newton oracle
on tiny meshes.

    python scripts/oracle_check.py [--seeds 50]
"""
import argparse

from tvadhesion.scenarios import random_problem
from tvadhesion.stepper import local_means, step


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=50)
    args = ap.parse_args()
    worst = 0.0
    for seed in range(args.seeds):
        p = random_problem(seed, nx=2, ny=1, K=8)
        s0 = p.init.snapshot(p.ctx, p.cfg)
        _, rep = step(s0, local_means(p.loads, p.grid, 1, p.ctx), p.grid, p.cfg.replace(newton_check=True), p.ctx)
        worst = max(worst, rep.oracle_diff)
        print(f"{seed:3d}  iterations {rep.iterations:3d}  difference {rep.oracle_diff:.2e}"
              f"{'  FLAG' if rep.oracle_flag else ''}")
    print(f"max difference {worst:.2e}")


if __name__ == "__main__":
    main()
