# byzsgd/harness.py

"""
Experiment runners behind the command-line sub-commands.

train                 full training runs (one per replicate) -> metrics.csv, summary.json
rge-bench             estimator on planted outliers over seeds -> rge_bench.csv
concentration-check   brute-force subset concentration diagnostic -> concentration.csv
compress-check        rand-k unbiasedness / variance checks -> compress_check.json
kappa-scan            empirical kappa against n -> kappa_scan.csv, kappa_scan.json

All files are UTF-8 with LF line endings; floats are written with repr so
that reruns with the same seed are byte-identical.
"""

import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .compression import draw_coords, select_scale
from .config import RunConfig, bench_grid, harness_value
from .datagen import (
    HeteroModelSpec,
    generate,
    homogeneous,
    kappa_mean_theoretical,
    planted_gradients,
)
from .errors import ConfigError, FilterError, TrainingAborted
from .model import (
    LocalDataset,
    ObjectiveSpec,
    global_gradient,
    local_full_gradient,
    minibatch_gradient,
    per_sample_gradients,
)
from .rge import estimate, max_eig_deviation
from .seeding import stream
from .trainer import UPSILON_CONST, MetricsRow, TrainResult, run_training

logger = logging.getLogger(__name__)

METRICS_FIELDS = [f.name for f in fields(MetricsRow)]
BENCH_FIELDS = [
    "eps_tilde",
    "attack",
    "seeds",
    "max_error",
    "median_error",
    "median_naive_error",
    "bound",
    "all_within_bound",
    "median_below_tenth_naive",
]
CONCENTRATION_FIELDS = ["seed", "best_lambda", "bound", "holds"]
KAPPA_FIELDS = ["n", "kappa_hat", "kappa_mean", "excess"]
MAX_ENUMERATION = 14
# median estimator error must stay below this fraction of the naive mean error
NAIVE_RATIO = 0.1


# Formatting


def format_value(value: Any) -> str:
    """CSV cell text: NaN for None and nan, repr for other floats"""
    if value is None:
        return "NaN"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "NaN"
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(_jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_metrics(path: Path, metrics: Sequence[MetricsRow]) -> Path:
    return write_csv(path, METRICS_FIELDS, ([getattr(m, name) for name in METRICS_FIELDS] for m in metrics))


# train


def _mean_or_none(values: Sequence[Optional[float]]) -> Optional[float]:
    if any(v is None for v in values):
        return None
    return float(np.mean([float(v) for v in values if v is not None]))


def average_metrics(runs: Sequence[Sequence[MetricsRow]]) -> List[MetricsRow]:
    """Seed-average of equally long metric sequences, row by row"""
    if not runs:
        return []
    length = min(len(run) for run in runs)
    averaged = []
    for t in range(length):
        rows = [run[t] for run in runs]
        values: Dict[str, Any] = {"round": rows[0].round}
        for name in METRICS_FIELDS[1:]:
            values[name] = _mean_or_none([getattr(r, name) for r in rows])
        averaged.append(MetricsRow(**values))
    return averaged


def build_worlds(config: RunConfig) -> List[LocalDataset]:
    fed = generate(stream(config.seeds.data_seed, "data"), config.data)
    if config.homogeneous:
        return homogeneous(fed.worlds, config.data.R)
    return fed.worlds


@dataclass(frozen=True)
class TrainOutcome:
    results: List[TrainResult]
    metrics: List[MetricsRow]
    out_dir: Path


def run_train(config: RunConfig) -> TrainOutcome:
    """
    Run every replicate and write the outputs.

    A single replicate writes metrics.csv; several write
    replicate_XXX/metrics.csv each, metrics_all.csv with a leading replicate
    column, and a seed-averaged metrics.csv. If a replicate aborts, whatever
    metrics exist are written before TrainingAborted propagates.
    """
    started = time.perf_counter()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    worlds = build_worlds(config)
    logger.info("train %r: %d replicate(s) into %s", config.name, config.replicates, out)

    def one(index: int) -> TrainResult:
        return run_training(
            config.train,
            config.objective,
            worlds,
            config.attack,
            config.seeds.for_replicate(index),
        )

    indices = list(range(config.replicates))
    outcomes: List[Any] = []
    if config.replicates > 1 and config.train.threads > 1:
        with ThreadPoolExecutor(max_workers=config.train.threads) as pool:
            futures = [pool.submit(one, i) for i in indices]
            for future in futures:
                try:
                    outcomes.append(future.result())
                except TrainingAborted as exc:
                    outcomes.append(exc)
    else:
        for i in indices:
            try:
                outcomes.append(one(i))
            except TrainingAborted as exc:
                outcomes.append(exc)
                break

    runs: List[List[MetricsRow]] = [list(o.metrics) for o in outcomes]
    if config.replicates == 1:
        write_metrics(out / "metrics.csv", runs[0])
        merged = list(runs[0])
    else:
        for i, run in enumerate(runs):
            write_metrics(out / f"replicate_{i:03d}" / "metrics.csv", run)
        write_csv(
            out / "metrics_all.csv",
            ["replicate", *METRICS_FIELDS],
            ([i, *(getattr(m, name) for name in METRICS_FIELDS)] for i, run in enumerate(runs) for m in run),
        )
        merged = average_metrics(runs)
        write_metrics(out / "metrics.csv", merged)

    failures = [o for o in outcomes if isinstance(o, TrainingAborted)]
    if failures:
        raise failures[0]

    results = [o for o in outcomes if isinstance(o, TrainResult)]
    write_json(out / "summary.json", train_summary(config, results, merged, time.perf_counter() - started))
    return TrainOutcome(results, merged, out)


def train_summary(
    config: RunConfig, results: Sequence[TrainResult], merged: Sequence[MetricsRow], wall: float
) -> Dict[str, Any]:
    first = results[0]
    return {
        "config": config.to_dict(),
        "measured": {
            "L": first.curvature.L,
            "mu": first.curvature.mu,
            "sigma_hat": first.sigma,
            "kappa_hat": first.kappa.value,
            "kappa_empirical": first.kappa.empirical,
            "kappa_ball_bound": first.kappa.ball_bound,
            "second_moment": first.second_moment,
        },
        "theoretical": {
            "sigma0_sq": first.sigma0_sq,
            "gamma": first.gamma,
            "ceiling": first.ceiling,
            "lr": first.lr,
            "failure_probability": first.failure_probability,
        },
        "final": asdict(merged[-1]) if merged else None,
        "replicates": len(results),
        "wall_clock_seconds": wall,
    }


# rge-bench


def rge_bound(sigma0: float, eps_tilde: float) -> float:
    """Resilience radius 82 sqrt(5/3) sigma0 sqrt(eps_tilde)"""
    return UPSILON_CONST * sigma0 * math.sqrt(eps_tilde)


def run_rge_bench(config: RunConfig) -> List[Dict[str, Any]]:
    eps_values, kinds = bench_grid(config)
    seeds = int(harness_value(config, "bench_seeds"))
    R = int(harness_value(config, "bench_R"))
    d = int(harness_value(config, "bench_d"))
    distance = float(harness_value(config, "bench_distance"))
    sigma0 = 1.0
    rows = []
    for i, eps_tilde in enumerate(eps_values):
        for j, kind in enumerate(kinds):
            errors, naive = [], []
            for s in range(seeds):
                rng = stream(config.seeds.master, "bench", s, i, j)
                inst = planted_gradients(rng, R, d, sigma0, eps_tilde, kind, distance)
                try:
                    ghat, _ = estimate(inst.grads, sigma0**2, eps_tilde)
                    errors.append(float(np.linalg.norm(ghat - inst.inlier_mean)))
                except FilterError as exc:
                    logger.warning("rge-bench eps=%g %s seed %d: %s", eps_tilde, kind.value, s, exc)
                    errors.append(math.inf)
                naive.append(inst.naive_error)
            bound = rge_bound(sigma0, eps_tilde)
            median = float(np.median(errors))
            median_naive = float(np.median(naive))
            rows.append(
                {
                    "eps_tilde": eps_tilde,
                    "attack": kind.value,
                    "seeds": seeds,
                    "max_error": max(errors),
                    "median_error": median,
                    "median_naive_error": median_naive,
                    "bound": bound,
                    "all_within_bound": all(e <= bound for e in errors),
                    "median_below_tenth_naive": median <= NAIVE_RATIO * median_naive,
                }
            )
            logger.info("rge-bench eps=%g %s: max error %.4g (bound %.4g)", eps_tilde, kind.value, max(errors), bound)
    write_csv(Path(config.out) / "rge_bench.csv", BENCH_FIELDS, ([r[k] for k in BENCH_FIELDS] for r in rows))
    return rows


# concentration-check


def brute_force_subset_concentration(
    points: npt.NDArray[np.float64],
    means: npt.NDArray[np.float64],
    eps_prime: float,
    sigma_max_sq: float,
) -> Tuple[float, float, bool]:
    """
    Best subset of ceil((1 - eps') m) points by exhaustive enumeration.

    Returns (best_lambda, bound, holds) with best_lambda the smallest
    lambda_max((1/|S|) sum_S (y_i - mu_i)(y_i - mu_i)^T) over all subsets and
    bound = (4 sigma_max^2 / eps') (1 + d / ((1 - eps') m)).
    """
    Y = np.atleast_2d(np.asarray(points, dtype=float))
    M = np.atleast_2d(np.asarray(means, dtype=float))
    if Y.shape != M.shape:
        raise ValueError(f"points {Y.shape} and means {M.shape} differ in shape")
    m, d = Y.shape
    if m > MAX_ENUMERATION:
        raise ValueError(f"Enumeration is limited to m <= {MAX_ENUMERATION}, got m={m}")
    if not 0.0 < eps_prime < 1.0:
        raise ValueError(f"eps_prime must lie in (0, 1), got {eps_prime}")
    size = int(math.ceil((1.0 - eps_prime) * m - 1e-9))
    deviations = Y - M
    best = math.inf
    for subset in itertools.combinations(range(m), size):
        best = min(best, max_eig_deviation(deviations[list(subset)], np.zeros(d)))
    bound = 4.0 * sigma_max_sq / eps_prime * (1.0 + d / ((1.0 - eps_prime) * m))
    return best, bound, best <= bound


def run_concentration_check(config: RunConfig) -> List[Dict[str, Any]]:
    """Gaussian points around per-point means (unit covariance, so sigma_max^2 = 1)"""
    m = int(harness_value(config, "concentration_m"))
    d = int(harness_value(config, "concentration_d"))
    eps_prime = float(harness_value(config, "concentration_eps_prime"))
    seeds = int(harness_value(config, "concentration_seeds"))
    rows = []
    for s in range(seeds):
        rng = stream(config.seeds.master, "bench", s)
        means = 2.0 * rng.standard_normal((m, d))
        points = means + rng.standard_normal((m, d))
        best, bound, holds = brute_force_subset_concentration(points, means, eps_prime, 1.0)
        rows.append({"seed": s, "best_lambda": best, "bound": bound, "holds": holds})
    write_csv(
        Path(config.out) / "concentration.csv",
        CONCENTRATION_FIELDS,
        ([r[k] for k in CONCENTRATION_FIELDS] for r in rows),
    )
    logger.info("concentration-check: bound held in %d/%d seeds", sum(r["holds"] for r in rows), seeds)
    return rows


# compress-check


def enumerate_compressed_moments(
    spec: ObjectiveSpec, ds: LocalDataset, x: npt.NDArray[np.float64], k: int
) -> Tuple[npt.NDArray[np.float64], float]:
    """
    Exact mean and second central moment of (d/k) select_K(grad f_i) over all
    size-k K and all single samples i (batch size one).
    """
    d = ds.dim
    grads = per_sample_gradients(spec, ds, x)
    full = local_full_gradient(spec, ds, x)
    total = np.zeros(d)
    spread = 0.0
    count = 0
    for K in itertools.combinations(range(d), k):
        idx = np.asarray(K)
        for g in grads:
            v = np.zeros(d)
            v[idx] = (d / k) * g[idx]
            total += v
            spread += float(np.sum((v - full) ** 2))
            count += 1
    return total / count, spread / count


def run_compress_check(config: RunConfig) -> Dict[str, Any]:
    """Exact enumeration at d=3, k=1, n=3 plus a Monte-Carlo check at d=100, k=10 (b=1)"""
    trials = int(harness_value(config, "compress_trials"))
    seed = config.seeds.master
    spec = config.objective

    small = generate(stream(seed, "bench", 0), HeteroModelSpec(d=3, R=1, n=3, noise_std=1.0)).worlds[0]
    x_small = stream(seed, "probe", 0).standard_normal(3)
    mean_small, var_small = enumerate_compressed_moments(spec, small, x_small, 1)
    full_small = local_full_gradient(spec, small, x_small)
    g2_small = float(np.mean(np.sum(per_sample_gradients(spec, small, x_small) ** 2, axis=1)))

    d, k = 100, 10
    big = generate(stream(seed, "bench", 1), HeteroModelSpec(d=d, R=1, n=50, noise_std=1.0)).worlds[0]
    x_big = stream(seed, "probe", 1).standard_normal(d)
    full_big = local_full_gradient(spec, big, x_big)
    g2_big = float(np.mean(np.sum(per_sample_gradients(spec, big, x_big) ** 2, axis=1)))
    rng = stream(seed, "bench", 2)
    total = np.zeros(d)
    total_sq = np.zeros(d)
    spread = 0.0
    spread_sq = 0.0
    for _ in range(trials):
        K = draw_coords(rng, d, k)
        v = select_scale(minibatch_gradient(rng, spec, big, 1, x_big), K, d, k)
        total += v
        total_sq += v**2
        err = float(np.sum((v - full_big) ** 2))
        spread += err
        spread_sq += err**2
    mc_mean = total / trials
    mc_std = np.sqrt(np.maximum(total_sq / trials - mc_mean**2, 0.0))
    stderr = np.where(mc_std > 0, mc_std / math.sqrt(trials), np.inf)
    z = np.abs(mc_mean - full_big) / stderr
    z = np.where(np.isfinite(stderr), z, 0.0)
    variance = spread / trials
    variance_stderr = math.sqrt(max(spread_sq / trials - variance**2, 0.0) / trials)
    variance_bound = (d / k) * g2_big

    report = {
        "enumeration": {
            "d": 3,
            "k": 1,
            "n": 3,
            "b": 1,
            "max_abs_bias": float(np.max(np.abs(mean_small - full_small))),
            "variance": var_small,
            "variance_bound": 3.0 * g2_small,
            "variance_within_bound": var_small <= 3.0 * g2_small,
        },
        "monte_carlo": {
            "d": d,
            "k": k,
            "b": 1,
            "trials": trials,
            "max_z_score": float(np.max(z)),
            "unbiased_within_4_se": bool(np.max(z) <= 4.0),
            "variance": variance,
            "variance_stderr": variance_stderr,
            "variance_bound": variance_bound,
            # within 4 standard errors
            "variance_within_bound": variance <= variance_bound + 4.0 * variance_stderr,
        },
    }
    write_json(Path(config.out) / "compress_check.json", report)
    return report


# kappa-scan


def empirical_kappa_at(spec: ObjectiveSpec, worlds: Sequence[LocalDataset], x: npt.NDArray[np.float64]) -> float:
    g = global_gradient(spec, worlds, x)
    return max(float(np.linalg.norm(local_full_gradient(spec, ds, x) - g)) for ds in worlds)


def log_log_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log y against log x over the positive pairs"""
    pairs = [(a, b) for a, b in zip(xs, ys) if a > 0 and b > 0]
    if len(pairs) < 2:
        return math.nan
    lx = np.log([a for a, _ in pairs])
    ly = np.log([b for _, b in pairs])
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)


def run_kappa_scan(config: RunConfig) -> Dict[str, Any]:
    """
    Average empirical kappa at x = 0 over replicate datasets for each n.

    The excess over kappa_mean_theoretical shrinks like n^(-1/2); the fitted
    log-log slope goes to kappa_scan.json.
    """
    ns = list(harness_value(config, "kappa_ns"))
    reps = int(harness_value(config, "kappa_replicates"))
    if not ns or any(n < 1 for n in ns):
        raise ConfigError(f"kappa_ns must be positive sample sizes, got {ns}")
    base = config.data
    rows = []
    for i, n in enumerate(ns):
        spec = HeteroModelSpec(
            d=base.d,
            R=base.R,
            n=n,
            feature_cov=base.feature_cov,
            noise_std=base.noise_std,
            shift_radius=base.shift_radius,
            base_param=base.base_param,
        )
        values = []
        kappa_mean = 0.0
        for rep in range(reps):
            fed = generate(stream(config.seeds.data_seed, "data", i, rep), spec)
            kappa_mean = kappa_mean_theoretical(spec, fed.shifts)
            values.append(empirical_kappa_at(config.objective, fed.worlds, np.zeros(base.d)))
        kappa_hat = float(np.mean(values))
        rows.append({"n": n, "kappa_hat": kappa_hat, "kappa_mean": kappa_mean, "excess": kappa_hat - kappa_mean})
    slope = log_log_slope([r["n"] for r in rows], [r["excess"] for r in rows])
    out = Path(config.out)
    write_csv(out / "kappa_scan.csv", KAPPA_FIELDS, ([r[k] for k in KAPPA_FIELDS] for r in rows))
    result = {"slope": slope, "rows": rows, "replicates": reps}
    write_json(out / "kappa_scan.json", result)
    logger.info("kappa-scan slope %.4g over n=%s", slope, ns)
    return result

