"""Command-line front end.

Exit codes: 0 success, 1 error (including usage errors), 2 at least one
run ended without converging.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from .evaluation import (ALGORITHM_NAMES, DEFAULT_MC_SAMPLES, IA_ALGORITHMS, SweepSpec,
                         fig3_table, run_point, run_sweep, write_records_csv, write_rows_csv,
                         write_sidecar)
from .interference import PolarGrid
from .robust import ALGORITHMS
from .scenario import ScenarioError, build_problem, generate_scenario, load_scenario, save_scenario

log = logging.getLogger("itsnbf")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2

BASELINES = ("mrt", "zf", "mmse", "wmmse")
IA = ("wqtia", "wweia", "mmseia")
PA = ("wqtia-pa", "wweia-pa", "mmseia-pa")

# figure presets: sweep variable, default grid, algorithms
FIGURES = {
    "fig5": ("snr_db", (0, 5, 10, 15, 20), ("mmse",) + IA),
    "fig6": ("snr_db", (0, 5, 10, 15, 20), BASELINES + IA),
    "fig7": ("snr_db", (0, 10, 20), ("wqtia", "wweia")),
    "fig8": ("i_thr_dbw", (-140, -145, -150, -155, -160, -165, -170), ("mmse", "wmmse") + IA),
    "fig9": ("k_s", (4, 8, 12, 16, 24, 32, 40, 48), ("mmse",) + IA),
    "fig10": ("snr_db", (0, 5, 10, 15, 20), IA + PA),
    "fig11": ("snr_db", (0, 5, 10, 15, 20), IA + PA),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("grid is empty")
    return vals


def _add_run_options(p):
    p.add_argument("--scenario", required=True, type=Path, help="scenario YAML file")
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--i-thr-dbw", type=float, default=-150.0)
    p.add_argument("--seed", type=int, default=0, help="Monte Carlo seed")
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("--grid-n-r", type=int, default=32, help="radial quadrature samples")
    p.add_argument("--grid-n-phi", type=int, default=64, help="angular quadrature samples")
    p.add_argument("--mc-samples", type=int, default=DEFAULT_MC_SAMPLES)
    p.add_argument("--tol", type=float, default=1e-4, help="outer convergence tolerance")
    p.add_argument("--iter-max", type=int, default=100)
    p.add_argument("--record-time", action="store_true",
                   help="fill the seconds column (makes outputs run-dependent)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="itsnbf", description="Robust satellite beamforming under "
                     "terrestrial interference constraints.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sc = sub.add_parser("scenario", help="write a scenario file with default system parameters")
    sc.add_argument("-o", "--output", required=True, type=Path)
    sc.add_argument("--k-s", type=int, default=12, help="satellite users")
    sc.add_argument("--n-bs", type=int, default=7, help="terrestrial base stations (1-7)")
    sc.add_argument("--users-per-bs", type=int, default=10)
    sc.add_argument("--cell-radius-m", type=float, default=500.0)
    sc.add_argument("--cluster-radius-m", type=float, default=400e3,
                    help="distance of the center station from the sub-satellite point")
    sc.add_argument("--min-separation-m", type=float, default=100e3)
    sc.add_argument("--seed", type=int, default=0)

    run = sub.add_parser("run", help="run one algorithm at one operating point")
    run.add_argument("--algorithm", required=True, help=", ".join(ALGORITHM_NAMES))
    _add_run_options(run)

    sw = sub.add_parser("sweep", help="parameter sweep behind one figure")
    sw.add_argument("--figure", required=True, choices=sorted(FIGURES) + ["fig3"])
    sw.add_argument("--grid", type=_float_list, help="comma-separated sweep values")
    sw.add_argument("--algorithms", help="comma-separated algorithm names")
    sw.add_argument("--workers", type=int, default=None,
                    help="parallel sweep points (default: ITSNBF_THREADS or 1)")
    _add_run_options(sw)
    sw.set_defaults(scenario=None)
    for action in sw._actions:
        if action.dest == "scenario":
            action.required = False
    return parser


def _run_config(args) -> dict:
    keep = ("algorithm", "figure", "grid", "algorithms", "snr_db", "i_thr_dbw", "seed",
            "grid_n_r", "grid_n_phi", "mc_samples", "tol", "iter_max", "record_time")
    cfg = {k: getattr(args, k) for k in keep if getattr(args, k, None) is not None}
    if args.scenario is not None:
        cfg["scenario_file"] = str(args.scenario)
    return cfg


def cmd_scenario(args) -> int:
    scenario = generate_scenario(k_s=args.k_s, n_bs=args.n_bs, users_per_bs=args.users_per_bs,
                                 cell_radius_m=args.cell_radius_m,
                                 cluster_radius_m=args.cluster_radius_m,
                                 min_separation_m=args.min_separation_m, seed=args.seed)
    save_scenario(scenario, args.output)
    log.info("wrote %s (%d satellite users)", args.output, scenario.k_s)
    return EXIT_OK


def cmd_run(args) -> int:
    if args.algorithm not in ALGORITHM_NAMES:
        raise _UsageError(f"unknown algorithm {args.algorithm!r}; choose from "
                          f"{', '.join(ALGORITHM_NAMES)}")
    scenario = load_scenario(args.scenario)
    grid = PolarGrid(args.grid_n_r, args.grid_n_phi)
    records = run_point(scenario, [args.algorithm], args.snr_db, args.i_thr_dbw, args.seed,
                        args.mc_samples, grid, args.tol, args.iter_max,
                        record_time=args.record_time)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    stem = args.out_dir / f"run_{args.algorithm}"
    write_records_csv(records, stem.with_suffix(".csv"))
    write_sidecar(stem.with_suffix(".json"), scenario, _run_config(args))
    rec = records[0]
    if rec.error:
        log.error("%s", rec.error)
        return EXIT_ERROR
    print(f"{rec.algorithm}: rate {rec.sum_rate:.4f} ± {rec.sum_rate_stderr:.4f} bit/s/Hz, "
          f"I_avg {rec.i_avg_dbw:.3f} dBW, {rec.iters} iterations")
    return EXIT_OK if rec.converged else EXIT_NOT_CONVERGED


def _fig7_rows(scenario, args, grid_values, algorithms):
    rows = []
    grid = PolarGrid(args.grid_n_r, args.grid_n_phi)
    for snr in grid_values:
        prob = build_problem(scenario, snr, args.i_thr_dbw, "integral", grid, args.tol,
                             args.iter_max)
        for name in algorithms:
            res = ALGORITHMS[name](prob)
            for it, obj, i_avg in res.trace:
                rows.append({"algorithm": name, "snr_db": float(snr), "iteration": it,
                             "objective": float(obj),
                             "i_avg_dbw": 10 * math.log10(i_avg) if i_avg > 0 else -math.inf,
                             "converged": res.converged})
    return rows


def cmd_sweep(args) -> int:
    args.out_dir.mkdir(parents=True, exist_ok=True)
    out = args.out_dir / f"{args.figure}.csv"
    if args.figure == "fig3":
        scenario = load_scenario(args.scenario) if args.scenario else generate_scenario()
        kw = {"cell_radii_m": args.grid} if args.grid else {}
        write_rows_csv(fig3_table(scenario.config, **kw), out, args.figure)
        write_sidecar(out.with_suffix(".json"), scenario, _run_config(args))
        return EXIT_OK
    if args.scenario is None:
        raise _UsageError(f"--scenario is required for {args.figure}")
    scenario = load_scenario(args.scenario)
    variable, default_grid, default_algs = FIGURES[args.figure]
    algorithms = tuple(a.strip() for a in args.algorithms.split(",")) if args.algorithms \
        else default_algs
    grid_values = args.grid or default_grid
    if args.figure == "fig7":
        rows = _fig7_rows(scenario, args, grid_values, algorithms)
        write_rows_csv(rows, out, args.figure)
        write_sidecar(out.with_suffix(".json"), scenario, _run_config(args))
        return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NOT_CONVERGED
    if variable == "k_s":
        grid_values = tuple(int(v) for v in grid_values)
        if max(grid_values) > scenario.k_s:
            raise _UsageError(f"scenario has {scenario.k_s} satellite users; the grid needs "
                              f"{max(grid_values)} (regenerate with --k-s)")
    try:
        spec = SweepSpec(variable, grid_values, algorithms, args.mc_samples, args.seed,
                         args.snr_db, args.i_thr_dbw, args.figure, args.tol, args.iter_max,
                         args.grid_n_r, args.grid_n_phi)
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    records = run_sweep(spec, scenario, args.workers, record_time=args.record_time)
    write_records_csv(records, out, args.figure)
    write_sidecar(out.with_suffix(".json"), scenario, _run_config(args))
    if any(r.error for r in records):
        return EXIT_ERROR
    if any(not r.converged for r in records if r.algorithm in IA_ALGORITHMS + ("wmmse",)):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


class _UsageError(Exception):
    pass


COMMANDS = {"scenario": cmd_scenario, "run": cmd_run, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"itsnbf: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ScenarioError as exc:
        print(f"itsnbf: scenario error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"itsnbf: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
