"""Monte Carlo rate estimation, beam patterns and parameter sweeps."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, robust
from .geometry import SystemConfig, as_user_set, linear_to_db, sample_gains, upa_steering
from .interference import PolarGrid, approximation_mse, integral_interference_matrix
from .problem import PrecoderResult, RobustProblem, lower_bound_rate
from .scenario import Scenario, build_problem, scenario_to_dict

log = logging.getLogger(__name__)

__all__ = ["ergodic_sum_rate", "lower_bound_rate", "beam_pattern", "EvalRecord", "SweepSpec",
           "run_algorithm", "evaluate", "run_point", "run_sweep", "fig3_table",
           "write_records_csv", "write_sidecar", "build_id", "ALGORITHM_NAMES"]

THREADS_ENV = "ITSNBF_THREADS"
DEFAULT_MC_SAMPLES = 2000


def ergodic_sum_rate(P: np.ndarray, stats, n_samples: int = DEFAULT_MC_SAMPLES,
                     rng: np.random.Generator | None = None,
                     chunk: int = 1000) -> tuple[float, float]:
    """Monte Carlo mean and standard error of the weighted sum rate.

    Each draw samples the Rician gains of all users; the per-user SINR is
    evaluated against the realised channel.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    users = as_user_set(stats)
    if not np.any(P):
        return 0.0, 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    S2 = np.abs(users.steering.conj().T @ P) ** 2  # K x K
    own = np.diag(S2)
    leak = S2.sum(axis=1) - own
    rates = []
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        g2 = np.abs(sample_gains(users, rng, n)) ** 2  # n x K
        sinr = g2 * own / (g2 * leak + users.noise_power)
        rates.append(np.log2(1.0 + sinr) @ users.weight)
        done += n
    r = np.concatenate(rates)
    return float(r.mean()), float(r.std(ddof=1) / math.sqrt(n_samples))


def beam_pattern(P: np.ndarray, config: SystemConfig, xs, ys) -> np.ndarray:
    """Received power map in dBW over the ground grid ``xs x ys`` (metres).

    Entry ``[i, j]`` is ``10 log10(sum_k |v^H p_k|^2 * path_gain)`` at
    ``(xs[j], ys[i])``.
    """
    X, Y = np.meshgrid(np.asarray(xs, float), np.asarray(ys, float))
    if np.any(X ** 2 + Y ** 2 > config.coverage_radius_m ** 2 * (1 + 1e-12)):
        raise ValueError("pattern grid extends beyond the coverage radius")
    v = upa_steering(X.ravel() / config.coverage_radius_m, Y.ravel() / config.coverage_radius_m,
                     config.m_x, config.m_y, config.element_spacing_ratio)
    power = np.sum(np.abs(v.conj().T @ P) ** 2, axis=1)
    d = np.sqrt(config.orbit_altitude_m ** 2 + X.ravel() ** 2 + Y.ravel() ** 2)
    with np.errstate(divide="ignore"):
        out = 10 * np.log10(power * config.path_gain(d))
    return out.reshape(X.shape)


# --------------------------------------------------------------------------


ALGORITHM_NAMES = ("mrt", "zf", "mmse", "wmmse", "wqtia", "wweia", "mmseia",
                   "wqtia-pa", "wweia-pa", "mmseia-pa")
IA_ALGORITHMS = ("wqtia", "wweia", "mmseia", "wqtia-pa", "wweia-pa", "mmseia-pa")


def run_algorithm(name: str, problem: RobustProblem) -> PrecoderResult:
    """Dispatch by name. PA names expect a problem built with ``model="pa"``."""
    if name not in ALGORITHM_NAMES:
        raise ValueError(f"unknown algorithm {name!r}; choose from {', '.join(ALGORITHM_NAMES)}")
    users = problem.users
    if name == "mrt":
        res = baselines.mrt(users.mean_channel, problem.p_t_w)
    elif name == "zf":
        res = baselines.zf(users.mean_channel, problem.p_t_w)
    elif name == "mmse":
        res = baselines.rzf_mmse(users, problem.p_t_w)
    elif name == "wmmse":
        res = baselines.wmmse_baseline(problem)
    elif name.endswith("-pa"):
        return robust.pa_variant(name[:-3], problem)
    else:
        return robust.ALGORITHMS[name](problem)
    res.avg_interference_w = problem.interference_w(res.P)
    if problem.audit is not None:
        res.avg_interference_true_w = problem.audit_interference_w(res.P)
    return res


@dataclass
class EvalRecord:
    algorithm: str
    snr_db: float
    i_thr_dbw: float
    sum_rate: float
    sum_rate_stderr: float
    lb_rate: float
    i_avg_dbw: float
    i_avg_true_dbw: float
    iters: int
    converged: bool
    seconds: float | None = None
    k_s: int | None = None
    error: str | None = None
    flags: tuple = ()

    @property
    def jensen_ok(self) -> bool:
        return self.lb_rate <= self.sum_rate + 3 * self.sum_rate_stderr

    def meets_threshold(self, margin_db: float = 0.1) -> bool:
        return self.i_avg_true_dbw <= self.i_thr_dbw + margin_db


def evaluate(result: PrecoderResult, problem: RobustProblem, snr_db: float, i_thr_dbw: float,
             n_samples: int, rng: np.random.Generator, seconds: float | None = None,
             integral: np.ndarray | None = None) -> EvalRecord:
    """Turn a precoder into a record; the true interference uses the integral model."""
    mean, se = ergodic_sum_rate(result.P, problem.users, n_samples, rng)
    i_avg = problem.interference_w(result.P)
    if problem.audit is not None:
        i_true = problem.audit_interference_w(result.P)
    else:
        i_true = i_avg
    return EvalRecord(result.algorithm, snr_db, i_thr_dbw, mean, se,
                      lower_bound_rate(result.P, problem.users), linear_to_db(i_avg),
                      linear_to_db(i_true), result.iterations, bool(result.converged), seconds,
                      problem.users.n_users, None, tuple(result.flags))


@dataclass(frozen=True)
class SweepSpec:
    variable: str  # "snr_db" | "i_thr_dbw" | "k_s"
    grid: tuple
    algorithms: tuple
    monte_carlo_samples: int = DEFAULT_MC_SAMPLES
    seed: int = 0
    snr_db: float = 10.0
    i_thr_dbw: float = -150.0
    figure: str | None = None
    tol: float = 1e-4
    iter_max: int = 100
    grid_n_r: int = 32
    grid_n_phi: int = 64

    def __post_init__(self):
        if self.variable not in ("snr_db", "i_thr_dbw", "k_s"):
            raise ValueError(f"unknown sweep variable {self.variable!r}")
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        if not self.grid:
            raise ValueError("sweep grid is empty")
        if not self.algorithms:
            raise ValueError("no algorithms selected")
        for a in self.algorithms:
            if a not in ALGORITHM_NAMES:
                raise ValueError(f"unknown algorithm {a!r}")
        if self.monte_carlo_samples < 100:
            raise ValueError("monte_carlo_samples must be >= 100")

    def point(self, value):
        snr, thr, k_s = self.snr_db, self.i_thr_dbw, None
        if self.variable == "snr_db":
            snr = float(value)
        elif self.variable == "i_thr_dbw":
            thr = float(value)
        else:
            k_s = int(value)
        return snr, thr, k_s


def run_point(scenario: Scenario, algorithms, snr_db: float, i_thr_dbw: float, seed,
              n_samples: int = DEFAULT_MC_SAMPLES, grid: PolarGrid = PolarGrid(),
              tol: float = 1e-4, iter_max: int = 100, integral=None,
              record_time: bool = True) -> list[EvalRecord]:
    """All algorithms at one operating point, sharing channel draws (common random numbers).

    Failures are logged and recorded with ``error`` set rather than raised.
    """
    if integral is None:
        integral = integral_interference_matrix(scenario.layout, scenario.config, grid)
    problems = {}
    records = []
    for name in algorithms:
        model = "pa" if name.endswith("-pa") else "integral"
        if model not in problems:
            problems[model] = build_problem(scenario, snr_db, i_thr_dbw, model, grid, tol,
                                            iter_max, integral=integral)
        prob = problems[model]
        # the audit reference for non-PA runs is the design model itself
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        t0 = time.perf_counter()
        try:
            res = run_algorithm(name, prob)
        except Exception as exc:  # a failed run must not stop the sweep
            log.error("%s failed at snr=%s thr=%s: %s", name, snr_db, i_thr_dbw, exc)
            nan = math.nan
            records.append(EvalRecord(name, snr_db, i_thr_dbw, nan, nan, nan, nan, nan, 0,
                                      False, None, scenario.k_s, f"{type(exc).__name__}: {exc}"))
            continue
        elapsed = time.perf_counter() - t0 if record_time else None
        rec = evaluate(res, prob, snr_db, i_thr_dbw, n_samples, rng, elapsed)
        rec.algorithm = name
        records.append(rec)
    return records


def _sweep_task(args):
    scenario, spec, idx, value, record_time = args
    snr, thr, k_s = spec.point(value)
    sc = scenario.with_users(k_s) if k_s is not None else scenario
    seed = [spec.seed, idx]
    return run_point(sc, spec.algorithms, snr, thr, seed, spec.monte_carlo_samples,
                     PolarGrid(spec.grid_n_r, spec.grid_n_phi), spec.tol, spec.iter_max,
                     record_time=record_time)


def _workers(requested):
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV)
    return max(1, int(env)) if env else 1


def run_sweep(spec: SweepSpec, scenario: Scenario, workers: int | None = None,
              record_time: bool = True) -> list[EvalRecord]:
    """Evaluate every algorithm at every grid point.

    Points run in parallel when ``workers`` (or the ``ITSNBF_THREADS``
    environment variable) exceeds one; records come back in grid order and
    each point's random stream depends only on ``(seed, index)``.
    """
    tasks = [(scenario, spec, i, v, record_time) for i, v in enumerate(spec.grid)]
    n = _workers(workers)
    if n == 1:
        chunks = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            chunks = list(pool.map(_sweep_task, tasks))
    return [rec for chunk in chunks for rec in chunk]


def fig3_table(config: SystemConfig, cell_radii_m=(100, 200, 300, 400, 500, 600, 700, 800, 900, 1000),
               densities=(1e-4, 2e-4, 4e-4), frequencies_hz=(2e9, 4e9, 6e9)) -> list[dict]:
    """Mean squared PA approximation error over cell radius, user density and carrier."""
    rows = []
    for f in frequencies_hz:
        for rho in densities:
            for r in cell_radii_m:
                mse = approximation_mse(config, float(r), float(rho), float(f))
                rows.append({"frequency_hz": float(f), "rho_tut_per_m2": float(rho),
                             "r_bs_m": float(r), "mse": mse})
    return rows


# --------------------------------------------------------------------------
# output


CSV_COLUMNS = ("algorithm", "snr_db", "i_thr_dbw", "sum_rate", "sum_rate_stderr", "lb_rate",
               "i_avg_dbw", "i_avg_true_dbw", "iters", "converged", "seconds")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_to_csv(records, figure: str | None = None, extra_columns=("k_s", "error")) -> str:
    cols = (("figure",) if figure else ()) + CSV_COLUMNS + tuple(extra_columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for rec in records:
        row = asdict(rec)
        if figure:
            row["figure"] = figure
        w.writerow([_fmt(row[c]) for c in cols])
    return buf.getvalue()


def write_records_csv(records, path, figure: str | None = None) -> None:
    Path(path).write_text(records_to_csv(records, figure), encoding="utf-8")


def write_rows_csv(rows: list[dict], path, figure: str | None = None) -> None:
    cols = (["figure"] if figure else []) + list(rows[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow(([figure] if figure else []) + [_fmt(row[c]) for c in rows[0]])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def build_id() -> str:
    """Content hash of the package sources, stable across checkouts of the same code."""
    h = hashlib.sha1()
    root = Path(__file__).parent
    for p in sorted(root.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def write_sidecar(path, scenario: Scenario, run_config: dict) -> None:
    doc = {"build": build_id(), "run": run_config, "scenario": scenario_to_dict(scenario)}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
