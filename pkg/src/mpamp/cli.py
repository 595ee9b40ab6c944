"""Command-line front end.

Subcommands: ``se`` (trajectory prediction for a schedule), ``dp``
(optimal schedule search), ``simulate`` (Monte Carlo protocol runs),
``pareto`` (trade-off sweeps), ``indep`` (quantization-error
independence maps).  Every output embeds the effective configuration
hash and seed, and reruns with identical inputs produce identical bytes.

Exit codes: 0 success, 1 usage or configuration error, 2 infeasible
problem, 3 numerical failure.
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from .config import RunConfig
from .errors import ConfigError, InfeasibleError, NumericalError
from .independence import IndependenceGrid, rejection_grid
from .scheduler import solve
from .simulator import random_admissible_schedule, run_ensemble
from .state_evolution import emse_db, fixed_point, run_schedule
from .tradeoff import pareto_filter, sweep

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser():
    parser = _Parser(prog="mpamp", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--jobs", type=int, default=1, help="worker budget")
        p.add_argument("--print-config", action="store_true",
                       help="print the effective configuration and exit")

    p_se = sub.add_parser("se", help="state-evolution trajectory for a schedule")
    common(p_se)
    p_se.add_argument("--schedule", help="schedule JSON (with a 'rates' list)")
    p_se.add_argument("--lossless", type=int, metavar="T", default=None,
                      help="run T iterations with uncompressed messages")

    p_dp = sub.add_parser("dp", help="optimal coding-rate schedule")
    common(p_dp)

    p_sim = sub.add_parser("simulate", help="Monte Carlo protocol ensemble")
    common(p_sim)
    p_sim.add_argument("--schedule", help="schedule JSON; random if omitted")
    p_sim.add_argument("--trials", type=int, default=50)
    p_sim.add_argument("--n", type=int, default=10_000)
    p_sim.add_argument("--iterations", type=int, default=10,
                       help="length of the random schedule when none is given")

    p_par = sub.add_parser("pareto", help="trade-off sweep over (b, target)")
    common(p_par)
    p_par.add_argument("--b-grid", required=True,
                       help="comma-separated list of b values")
    p_par.add_argument("--delta-db-grid", required=True,
                       help="comma-separated targets in dB above the MMSE")

    p_ind = sub.add_parser("indep", help="quantization independence maps")
    common(p_ind)
    p_ind.add_argument("--trials", type=int, default=100)
    p_ind.add_argument("--n", type=int, default=10_000)
    p_ind.add_argument("--gammas", default=None,
                       help="comma-separated bin sizes (default 2^0..2^-10)")
    p_ind.add_argument("--sigmas", default=None,
                       help="comma-separated per-node noise stds")
    return parser


def _write_csv(path, cfg, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash: {cfg.config_hash()}\n")
        fh.write(f"# seed: {cfg.seed}\n")
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _trajectory_rows(traj, mmse):
    return [(st.t, st.rate, st.distortion, st.sigma2, st.mse, st.emse,
             emse_db(st.mse, mmse)) for st in traj]


_TRAJ_COLS = ("t", "rate", "distortion", "sigma2", "mse", "emse", "emse_db")


def _load_rates(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        rates = doc.get("rates")
        gammas = doc.get("gammas")
    else:
        rates, gammas = doc, None
    if not isinstance(rates, list) or not rates:
        raise ConfigError(f"schedule file {path} carries no usable 'rates' list")
    return [float(r) for r in rates], gammas


def _cmd_se(cfg, args, out):
    fp = fixed_point(cfg.system)
    if args.lossless is not None:
        rates = [math.inf] * args.lossless
        rd = None
    elif args.schedule:
        rates, _ = _load_rates(args.schedule)
        rd = cfg.family()
    else:
        raise ConfigError("se needs --schedule or --lossless T")
    traj = run_schedule(cfg.system, rates, rd)
    _write_csv(out / "trajectory.csv", cfg, _TRAJ_COLS,
               _trajectory_rows(traj, fp.mmse))
    return 0


def _schedule_doc(cfg, sched, mmse):
    return {
        "config": cfg.canonical(),
        "config_hash": cfg.config_hash(),
        "b": sched.b,
        "delta": sched.delta,
        "rates": list(sched.rates),
        "r_agg": sched.r_agg,
        "t": sched.t,
        "cost": sched.cost,
        "final_mse": sched.final_mse,
        "final_emse_db": emse_db(sched.final_mse, mmse) if sched.trajectory else None,
        "trajectory": [
            {"t": st.t, "rate": st.rate, "distortion": st.distortion,
             "sigma2": st.sigma2, "mse": st.mse, "emse": st.emse}
            for st in sched.trajectory
        ],
    }


def _cmd_dp(cfg, args, out):
    fp = fixed_point(cfg.system)
    rd = cfg.family()
    _, sched = solve(cfg.system, cfg.b, cfg.delta(), rd,
                     dsigma_db=cfg.dp["dsigma_db"], dr=cfg.dp["dr"],
                     r_max=cfg.dp["r_max"], t_max=cfg.dp["t_max"])
    _write_json(out / "schedule.json", _schedule_doc(cfg, sched, fp.mmse))
    _write_csv(out / "trajectory.csv", cfg, _TRAJ_COLS,
               _trajectory_rows(sched.trajectory, fp.mmse))
    return 0


def _cmd_simulate(cfg, args, out):
    if cfg.system.nodes < 1 or (round(cfg.kappa * args.n) % cfg.nodes):
        raise ConfigError(
            f"M = kappa * n = {round(cfg.kappa * args.n)} must be divisible "
            f"by P = {cfg.nodes}"
        )
    if args.schedule:
        rates, gammas = _load_rates(args.schedule)
        if gammas is None:
            raise ConfigError("simulate needs per-iteration 'gammas' in the "
                              "schedule file (bin sizes for the quantizer)")
    else:
        rates, gammas, _ = random_admissible_schedule(
            cfg.system, args.iterations, seed=cfg.seed)
    from .ratedist import EcsqFamily

    fam = EcsqFamily(cfg.prior, cfg.nodes, reconstruction="midpoint",
                     enforce_bin_limit=False)
    traj = run_schedule(cfg.system, rates, fam)
    rep = run_ensemble(cfg.system, rates, gammas, trials=args.trials,
                       base_seed=cfg.seed, n=args.n, se_trajectory=traj,
                       jobs=args.jobs)
    rows = [
        (t + 1, rates[t], gammas[t], rep["mean_mse"][t], rep["stderr_mse"][t],
         rep["se_mse"][t], rep["gap_db"][t], rep["mean_sigma_hat2"][t],
         rep["mean_distortion"][t])
        for t in range(len(rates))
    ]
    _write_csv(out / "ensemble.csv", cfg,
               ("t", "rate", "gamma", "mean_mse", "stderr_mse", "se_mse",
                "gap_db", "mean_sigma_hat2", "mean_distortion"), rows)
    return 0


def _cmd_pareto(cfg, args, out):
    fp = fixed_point(cfg.system)
    rd = cfg.family()
    b_values = [float(x) for x in args.b_grid.split(",") if x]
    dbs = [float(x) for x in args.delta_db_grid.split(",") if x]
    deltas = [fp.mmse * (10 ** (db / 10.0) - 1.0) for db in dbs]
    points, skipped = sweep(cfg.system, b_values, deltas, rd, jobs=args.jobs,
                            dsigma_db=cfg.dp["dsigma_db"], dr=cfg.dp["dr"],
                            r_max=cfg.dp["r_max"], t_max=cfg.dp["t_max"])
    frontier = {p.key() for p in pareto_filter(points)}
    db_of = {float(d): db for d, db in zip(deltas, dbs)}
    rows = [
        (p.b, db_of[p.delta], p.t, p.r_agg, p.mse, emse_db(p.mse, fp.mmse),
         int(p.key() in frontier))
        for p in points
    ]
    _write_csv(out / "pareto.csv", cfg,
               ("b", "delta_db", "t", "r_agg", "mse", "mse_db_above_mmse",
                "pareto"), rows)
    _write_json(out / "pareto.json", {
        "config": cfg.canonical(),
        "config_hash": cfg.config_hash(),
        "skipped_cells": [{"b": b, "delta": d} for b, d in skipped],
        "points": [
            {"b": p.b, "delta": p.delta, "t": p.t, "r_agg": p.r_agg,
             "mse": p.mse, "pareto": p.key() in frontier,
             "rates": list(p.schedule)}
            for p in points
        ],
    })
    return 0


def _cmd_indep(cfg, args, out):
    kwargs = {"trials": args.trials, "n": args.n, "nodes": cfg.nodes}
    if args.gammas:
        kwargs["gammas"] = tuple(float(x) for x in args.gammas.split(",") if x)
    if args.sigmas:
        kwargs["sigmas"] = tuple(float(x) for x in args.sigmas.split(",") if x)
    grid = IndependenceGrid(**kwargs)
    rep = rejection_grid(cfg.prior, grid, seed=cfg.seed)
    rows = []
    for si, sigma in enumerate(rep["sigmas"]):
        for gi, gamma in enumerate(rep["gammas"]):
            rows.append((gamma, sigma, rep["reject_wn"][si, gi],
                         rep["reject_wnx"][si, gi]))
    _write_csv(out / "independence.csv", cfg,
               ("gamma", "sigma", "rejection_fraction_wn",
                "rejection_fraction_wnx"), rows)
    return 0


_COMMANDS = {"se": _cmd_se, "dp": _cmd_dp, "simulate": _cmd_simulate,
             "pareto": _cmd_pareto, "indep": _cmd_indep}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = RunConfig.from_file(args.config)
        if args.seed is not None:
            raw = dict(cfg.raw)
            raw["seed"] = args.seed
            cfg = RunConfig(raw)
        if args.print_config:
            sys.stdout.write(cfg.canonical_yaml())
            return 0
        out = Path(args.out if args.out is not None else cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, args, out)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
