"""Batch front-end: ``run``, ``sweep`` and ``check`` on scenario config files.

Output directory precedence: ``--out``, then ``$TVADHESION_OUT``, then
``./out``.  Every run writes into ``<out>/<scenario name>`` (sweeps into
``<out>/<scenario name>-<ladder>``).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import Scenario, load_config
from .diagnostics import (ConvergenceReport, convergence_study, norm_report, positivity_report)
from .energy import check_proof_inequalities, proof_inequalities
from .state import ConfigError
from .stepper import StepFailure, run

ENV_OUT = "TVADHESION_OUT"

STEP_COLUMNS = ("k", "time", "iterations", "solver_residual", "halvings", "pinned",
                "energy", "energy_prev", "energy_prev_untruncated", "diss_rho_u", "diss_rho_chi",
                "exchange", "gap", "work_h", "work_ell", "work_F", "lhs", "rhs",
                "energy_residual", "slack", "min_theta", "min_theta_s", "proof_failures")

EXIT_OK, EXIT_CONFIG, EXIT_STEP, EXIT_CHECKS = 0, 2, 3, 4


def output_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(ENV_OUT) or "out")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _dump_field(path: Path, ctx, snap, name: str) -> None:
    if name in ("theta", "u"):
        pts = ctx.bulk.nodes
        idx = np.arange(ctx.N)
    else:
        pts = ctx.bulk.nodes[ctx.bidx]
        idx = np.arange(ctx.S)
    vals = getattr(snap, name)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "x", "y"] + (["ux", "uy"] if name == "u" else [name]))
        for i in idx:
            row = [int(i), _fmt(pts[i, 0]), _fmt(pts[i, 1])]
            row += [_fmt(v) for v in np.atleast_1d(vals[i])]
            w.writerow(row)


def run_scenario(sc: Scenario, out: Path, seed: int = 0) -> dict:
    """Run one scenario, write ``steps.csv``, field dumps and ``summary.json``.

    Returns the summary; raises :class:`StepFailure` on a failed step.
    """
    p = sc.build(seed) if seed else sc.problem
    ctx, cfg, grid = p.ctx, p.cfg, p.grid
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    proof_bad = set()

    def on_step(k, prev, nxt, rep):
        bad = check_proof_inequalities(proof_inequalities(prev, nxt, grid.tau, cfg, ctx))
        proof_bad.update(bad)
        rows.append((k, nxt, rep, len(bad)))

    traj = run(p.init, grid, p.loads, cfg, ctx, callback=on_step)
    with (out / "steps.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_COLUMNS)
        for (k, snap, rep, nbad), e in zip(rows, traj.energy):
            w.writerow([_fmt(v) for v in (
                k, snap.time, rep.iterations, rep.residual, rep.halvings, rep.pinned, e.energy,
                e.energy_prev, e.energy_prev_untruncated, e.diss_rho_u, e.diss_rho_chi, e.exchange,
                e.gap, e.work_h, e.work_ell, e.work_F, e.lhs, e.rhs, e.residual, e.slack,
                np.min(snap.theta), np.min(snap.theta_s), nbad)])
    dumps = sorted(set(sc["output.dump_times"]))
    if dumps:
        fdir = out / "fields"
        fdir.mkdir(exist_ok=True)
        for t in dumps:
            k = int(round(t / grid.tau))
            for name in sc["output.fields"]:
                _dump_field(fdir / f"{name}_k{k:05d}.csv", ctx, traj.snapshots[k], name)
    ps = tuple(int(x) for x in sc["output.ps"])
    norms = norm_report(traj, ctx, sc["output.nu"], ps)
    pos = positivity_report(traj, ps)
    tol_neg = -10.0 * cfg.tol
    flags = {
        "energy_inequality": all(e.ok for e in traj.energy),
        "nonnegative": bool(pos.min_theta >= tol_neg and pos.min_theta_s >= tol_neg),
        "strictly_positive": not pos.flag,
        "proof_inequalities": not proof_bad,
        "oracle_agreement": not any(r.oracle_flag for r in traj.reports),
    }
    summary = {
        "name": sc.name,
        "config_hash": sc.text_hash,
        "seed": seed,
        "steps": grid.K,
        "tau": grid.tau,
        "nodes": {"bulk": ctx.N, "surface": ctx.S},
        "norms": norms.as_dict(),
        "positivity": {"min_theta": pos.min_theta, "min_theta_s": pos.min_theta_s,
                       "recip_theta": pos.recip_theta, "recip_theta_s": pos.recip_theta_s},
        "energy": {"min_residual": min(e.residual for e in traj.energy),
                   "slack": traj.energy[0].slack,
                   "final": traj.energy[-1].energy},
        "iterations": {"max": max(r.iterations for r in traj.reports),
                       "total": sum(r.iterations for r in traj.reports),
                       "halvings": sum(r.halvings for r in traj.reports)},
        "failed_proof_inequalities": sorted(proof_bad),
        "flags": flags,
        "final": {"theta_mean": float(ctx.mass @ traj.snapshots[-1].theta) / float(ctx.mass.sum()),
                  "theta_s_mean": float(ctx.w @ traj.snapshots[-1].theta_s) / float(ctx.w.sum()),
                  "chi_mean": float(ctx.w @ traj.snapshots[-1].chi) / float(ctx.w.sum()),
                  "u_max": float(np.max(np.abs(traj.snapshots[-1].u)))},
    }
    write_json(out / "summary.json", summary)
    return summary


def ladder_values(sc: Scenario, ladder: str, levels: int, factor: float | None = None) -> list:
    if levels < 3:
        raise ConfigError("sweep", f"a ladder needs at least 3 levels, got {levels}")
    if ladder == "tau":
        f = int(factor or 2)
        return [sc["time.K"] * f ** i for i in range(levels)]
    base = sc["solver.rho"] if ladder == "rho" else sc["solver.varsigma"]
    if not base > 0:
        raise ConfigError("sweep", f"the {ladder} ladder needs a positive starting value")
    f = float(factor or 10.0)
    return [base / f ** i for i in range(levels)]


def run_sweep(sc: Scenario, ladder: str, levels: int, out: Path, threads: int = 1,
              factor: float | None = None, seed: int = 0) -> ConvergenceReport:
    """Convergence ladder; the ``sigma`` ladder runs with ``rho = 0``."""
    values = ladder_values(sc, ladder, levels, factor)

    def make(v):
        if ladder == "tau":
            s = sc.with_values(time__K=v)
        elif ladder == "rho":
            s = sc.with_values(solver__rho=v)
        else:
            s = sc.with_values(solver__rho=0.0, solver__varsigma=v)
        return s.build(seed) if seed else s.problem

    ps = tuple(int(x) for x in sc["output.ps"])
    rep = convergence_study(make, values, ladder, threads=threads, nu=sc["output.nu"], ps=ps)
    out.mkdir(parents=True, exist_ok=True)
    d = rep.as_dict()
    d["config_hash"] = sc.text_hash
    write_json(out / "sweep.json", d)
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        fields = list(rep.diffs)
        w.writerow(["level", "value", "sup_energy"] + [f"diff_{f}" for f in fields]
                   + [f"rate_{f}" for f in fields])
        for i, v in enumerate(values):
            row = [i, _fmt(v), _fmt(rep.sup_energy[i])]
            row += [_fmt(rep.diffs[f][i - 1]) if i > 0 else "" for f in fields]
            row += [_fmt(rep.rates[f][i - 2]) if i > 1 else "" for f in fields]
            w.writerow(row)
    return rep


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tvadhesion", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("config", help="scenario config file")
        p.add_argument("--out", default=None, help=f"output directory (default ${ENV_OUT} or ./out)")
        p.add_argument("--threads", type=int, default=1, help="concurrent ladder levels")
        p.add_argument("--seed", type=int, default=0, help="seed for init.noise")

    common(sub.add_parser("run", help="run one scenario"))
    sw = sub.add_parser("sweep", help="run a convergence ladder")
    common(sw)
    sw.add_argument("--ladder", choices=("tau", "rho", "sigma"), required=True)
    sw.add_argument("--levels", type=int, default=4)
    sw.add_argument("--factor", type=float, default=None,
                    help="ratio between levels (default 2 for tau, 10 otherwise)")
    common(sub.add_parser("check", help="validate a config file only"))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        sc = load_config(args.config)
        if args.cmd == "check":
            print(f"ok {sc.name} {sc.text_hash}")
            return EXIT_OK
        base = output_dir(args.out)
        if args.cmd == "run":
            s = run_scenario(sc, base / sc.name, args.seed)
            print(json.dumps(_jsonable(s["flags"]), sort_keys=True))
            return EXIT_OK if all(s["flags"].values()) else EXIT_CHECKS
        rep = run_sweep(sc, args.ladder, args.levels, base / f"{sc.name}-{args.ladder}", args.threads,
                        args.factor, args.seed)
        ok = rep.all_monotone and rep.energy_uniform
        print(json.dumps({"monotone": rep.all_monotone, "energy_uniform": rep.energy_uniform}, sort_keys=True))
        return EXIT_OK if ok else EXIT_CHECKS
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StepFailure as e:
        print(f"error: step failure at step {e.k}: {e}", file=sys.stderr)
        return EXIT_STEP
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
