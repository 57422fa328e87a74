"""Refinement and regularization ladders on the reference scenario.

    python scripts/ladders.py tau|rho|sigma [--threads N]
"""
import argparse
import time

from tvadhesion.diagnostics import convergence_study
from tvadhesion.scenarios import reference_problem

LADDERS = {
    "tau": ([16, 32, 64, 128, 256], lambda K: reference_problem(K=K)),
    "rho": ([1e-1, 1e-2, 1e-3, 1e-4], lambda v: reference_problem(rho=v)),
    "sigma": ([1e-1, 1e-2, 1e-3], lambda v: reference_problem(rho=0.0, varsigma=v)),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("ladder", choices=sorted(LADDERS))
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    values, make = LADDERS[args.ladder]
    t0 = time.perf_counter()
    r = convergence_study(make, values, args.ladder, threads=args.threads)
    print(f"{args.ladder} ladder {values}, {time.perf_counter() - t0:.1f}s")
    for name, d in r.diffs.items():
        rates = " ".join(f"{x:.3f}" for x in r.rates[name])
        print(f"  {name:8s} diffs {' '.join(f'{x:.3e}' for x in d)}  rates {rates}  monotone {r.monotone[name]}")
    print("  sup energy", " ".join(f"{x:.6g}" for x in r.sup_energy), "uniform", r.energy_uniform)
    print("  norms uniform:", all(r.norm_uniform.values()),
          [n for n, u in r.norm_uniform.items() if not u] or "")
    print(f"  min theta {min(r.min_theta):.4g}, min theta_s {min(r.min_theta_s):.4g}")


if __name__ == "__main__":
    main()
