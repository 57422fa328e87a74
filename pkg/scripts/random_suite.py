"""Run randomized full-coupling scenarios and report energy, positivity and
convexity-inequality checks per seed.

    python scripts/random_suite.py [--seeds 100] [--start 0]
"""
import argparse
import time

from tvadhesion.energy import check_proof_inequalities, proof_inequalities
from tvadhesion.scenarios import random_problem
from tvadhesion.stepper import run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--start", type=int, default=0)
    args = ap.parse_args()
    t_all = time.perf_counter()
    failures = 0
    print("seed  time[s]  max_it  min_res/slack  min_theta  min_theta_s  violations")
    for seed in range(args.start, args.start + args.seeds):
        p = random_problem(seed)
        bad = set()

        def on_step(k, prev, nxt, rep):
            bad.update(check_proof_inequalities(proof_inequalities(prev, nxt, p.grid.tau, p.cfg, p.ctx)))
        t0 = time.perf_counter()
        traj = run(p.init, p.grid, p.loads, p.cfg, p.ctx, callback=on_step)
        res = min(e.residual / e.slack for e in traj.energy)
        mt, ms = traj.field("theta").min(), traj.field("theta_s").min()
        ok = res >= -1 and mt > 0 and ms > 0 and not bad
        failures += not ok
        print(f"{seed:4d}  {time.perf_counter() - t0:7.2f}  {max(r.iterations for r in traj.reports):6d}  "
              f"{res:13.3g}  {mt:9.4g}  {ms:11.4g}  {','.join(sorted(bad)) or '-'}")
    print(f"{args.seeds} scenarios, {failures} failing, {time.perf_counter() - t_all:.1f}s")
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
