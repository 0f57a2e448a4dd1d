# byzsgd/trainer.py

"""
Byzantine-resilient training loops.

One round: the master (in compressed mode) broadcasts a coordinate set, the
adversary picks its workers, every worker computes its gradient from its own
seeded stream, corrupt columns are replaced, the master filters the R columns
with rge.estimate and takes a projected step.

Three modes share the loop: mini-batch SGD, full-batch GD, and SGD with
rand-k compression on a master-chosen coordinate set.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import numpy.typing as npt

from .attacks import AttackContext, AttackSpec, apply_attack, choose_corrupt_set
from .compression import CoordinateSet, draw_coords, embed, restrict, select_scale
from .errors import ConfigError, FilterError, TrainingAborted
from .model import (
    Curvature,
    DomainSpec,
    KappaEstimate,
    LocalDataset,
    ObjectiveKind,
    ObjectiveSpec,
    ParameterPoint,
    curvature_constants,
    default_probes,
    global_gradient,
    local_full_gradient,
    measure_kappa,
    measure_second_moment,
    measure_sigma,
    minibatch_gradient,
    probe_ball,
    project,
    quadratic_optimum,
)
from .rge import (
    MAX_EPS_TILDE,
    default_sigma0_sq,
    default_sigma0_sq_compressed,
    default_sigma0_sq_full_batch,
    estimate,
)
from .seeding import stream

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]

UPSILON_CONST = 82.0 * math.sqrt(5.0 / 3.0)


class TrainMode(Enum):
    SGD = "sgd"
    FULL_GD = "full_gd"
    COMPRESSED_SGD = "compressed_sgd"


class LRRule(Enum):
    STRONGLY_CONVEX = "strongly_convex"
    NONCONVEX = "nonconvex"
    MANUAL = "manual"


@dataclass(frozen=True, eq=False)
class TrainConfig:
    """
    Settings of one training run.

    eps is the corrupt fraction the estimator is tuned for and eps_prime the
    slack on top of it; the filter runs with eps_tilde = eps + eps_prime,
    clamped to 1/4 with a warning so breakdown experiments can go beyond it.
    """

    T: int = 100
    mode: TrainMode = TrainMode.SGD
    b: int = 1
    k: Optional[int] = None
    eps: float = 0.0
    eps_prime: float = 0.05
    lr_rule: LRRule = LRRule.STRONGLY_CONVEX
    lr: Optional[float] = None
    domain: DomainSpec = field(default_factory=DomainSpec)
    sigma0_override: Optional[float] = None
    upsilon_const: float = UPSILON_CONST
    independent_coords: bool = False
    threads: int = 1

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.b < 1:
            raise ValueError(f"Batch size must be >= 1, got {self.b}")
        if self.mode is TrainMode.COMPRESSED_SGD and (self.k is None or self.k < 1):
            raise ValueError("compressed_sgd needs k >= 1")
        if self.eps < 0 or self.eps_prime <= 0 or self.eps + self.eps_prime >= 1:
            raise ValueError(
                f"Need eps >= 0, eps_prime > 0 and eps + eps_prime < 1, "
                f"got eps={self.eps}, eps_prime={self.eps_prime}"
            )
        if self.lr_rule is LRRule.MANUAL and (self.lr is None or not self.lr > 0):
            raise ValueError("The manual learning-rate rule needs lr > 0")
        if self.sigma0_override is not None and self.sigma0_override < 0:
            raise ValueError(f"sigma0_override must be >= 0, got {self.sigma0_override}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")

    @property
    def eps_tilde(self) -> float:
        return min(self.eps + self.eps_prime, MAX_EPS_TILDE)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "T": self.T,
            "mode": self.mode.value,
            "b": self.b,
            "k": self.k,
            "eps": self.eps,
            "eps_prime": self.eps_prime,
            "lr_rule": self.lr_rule.value,
            "lr": self.lr,
            "domain_radius": self.domain.radius if self.domain.bounded else None,
            "sigma0_override": self.sigma0_override,
            "upsilon_const": self.upsilon_const,
            "independent_coords": self.independent_coords,
            "threads": self.threads,
        }


@dataclass(frozen=True)
class MetricsRow:
    """Per-round measurements; None marks a field that does not apply"""

    round: int
    dist_sq_to_opt: Optional[float]
    grad_norm_sq: float
    est_error: Optional[float] = None
    active_count: Optional[int] = None
    honest_removed: Optional[int] = None
    filter_rounds: Optional[int] = None
    sum_c_tau_final: Optional[float] = None


@dataclass(frozen=True, eq=False)
class TrainResult:
    trajectory: List[ParameterPoint]
    metrics: List[MetricsRow]
    x_star: ParameterPoint
    curvature: Curvature
    kappa: KappaEstimate
    sigma: float
    second_moment: Optional[float]
    sigma0_sq: float
    lr: float
    gamma: float
    ceiling: float
    failure_probability: float

    @property
    def final(self) -> MetricsRow:
        return self.metrics[-1]


# Theory


def learning_rate(rule: LRRule, L: float, mu: float, manual: Optional[float] = None) -> float:
    """mu / L^2 (strongly convex), 1 / (4L) (non-convex) or the manual value"""
    if rule is LRRule.MANUAL:
        if manual is None or not manual > 0:
            raise ValueError("The manual learning-rate rule needs a positive lr")
        return float(manual)
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    if rule is LRRule.NONCONVEX:
        return 1.0 / (4.0 * L)
    if not mu > 0:
        raise ValueError("The strongly-convex rule needs mu > 0; the objective is degenerate")
    return mu / L**2


def gamma_bound(
    sigma: float,
    kappa: float,
    b: int,
    R: int,
    d: int,
    eps: float,
    eps_prime: float,
    upsilon_const: float = UPSILON_CONST,
    sigma0_sq: Optional[float] = None,
) -> float:
    """
    Gamma = 9 sigma^2 / ((1 - (eps + eps')) b R) + 9 kappa^2 + 9 Upsilon^2.

    Upsilon^2 = upsilon_const^2 sigma0^2 (eps + eps'); sigma0^2 defaults to
    default_sigma0_sq of the same arguments.
    """
    if sigma0_sq is None:
        sigma0_sq = default_sigma0_sq(sigma, b, kappa, eps, eps_prime, d, R)
    upsilon_sq = upsilon_const**2 * sigma0_sq * (eps + eps_prime)
    sampling = 9.0 * sigma**2 / ((1.0 - (eps + eps_prime)) * b * R)
    return sampling + 9.0 * kappa**2 + 9.0 * upsilon_sq


def gamma_gd_bound(kappa: float, eps: float, upsilon_const: float = UPSILON_CONST) -> float:
    """Full-batch floor 6 kappa^2 + 6 (upsilon_const kappa sqrt(eps))^2"""
    return 6.0 * kappa**2 + 6.0 * (upsilon_const * kappa * math.sqrt(eps)) ** 2


def theory_ceiling(mode: TrainMode, L: float, mu: float, gamma: float) -> float:
    """Limit of E||x^T - x*||^2: (3L^2/mu^4) Gamma, or (2L^2/mu^4) Gamma_GD for full_gd"""
    if not mu > 0:
        return math.inf
    factor = 2.0 if mode is TrainMode.FULL_GD else 3.0
    return factor * L**2 / mu**4 * gamma


def failure_probability(T: int, eps: float, eps_prime: float, R: int) -> float:
    """Union bound T exp(-eps'^2 (1 - eps) R / 16), capped at 1"""
    return min(1.0, T * math.exp(-(eps_prime**2) * (1.0 - eps) * R / 16.0))


def _sigma0_sq_independent(
    G2: float, b: int, kappa: float, eps: float, eps_prime: float, d: int, k: int, R: int
) -> float:
    # decoder works in R^d, so the dimension term keeps d
    honest = (1.0 - (eps + eps_prime)) * R
    return 24.0 * d * G2 / (k * b * eps_prime) * (1.0 + d / honest) + 16.0 * kappa**2


# Loop


def _worker_gradient(
    cfg: TrainConfig,
    spec: ObjectiveSpec,
    ds: LocalDataset,
    x: ParameterPoint,
    rng: np.random.Generator,
    coords: Optional[CoordinateSet],
) -> Vector:
    if cfg.mode is TrainMode.FULL_GD:
        return local_full_gradient(spec, ds, x)
    if cfg.mode is TrainMode.SGD:
        return minibatch_gradient(rng, spec, ds, cfg.b, x)

    d = ds.dim
    assert cfg.k is not None
    if coords is None:
        own = draw_coords(rng, d, cfg.k)
        return select_scale(minibatch_gradient(rng, spec, ds, cfg.b, x), own, d, cfg.k)
    return (d / cfg.k) * restrict(minibatch_gradient(rng, spec, ds, cfg.b, x), coords)


def _check_consistent(cfg: TrainConfig, worlds: Sequence[LocalDataset]) -> None:
    if len(worlds) < 2:
        raise ConfigError(f"Need at least two workers, got {len(worlds)}")
    d = worlds[0].dim
    if any(ds.dim != d for ds in worlds):
        raise ConfigError("All workers must share the feature dimension")
    if cfg.mode is not TrainMode.FULL_GD:
        smallest = min(ds.n for ds in worlds)
        if cfg.b > smallest:
            raise ConfigError(f"Batch size b={cfg.b} exceeds the smallest local dataset (n={smallest})")
    if cfg.mode is TrainMode.COMPRESSED_SGD and cfg.k is not None and cfg.k > d:
        raise ConfigError(f"k={cfg.k} exceeds the dimension d={d}")


def _row(
    spec: ObjectiveSpec,
    worlds: Sequence[LocalDataset],
    x: ParameterPoint,
    x_star: ParameterPoint,
    round: int,
    **filter_stats: Any,
) -> MetricsRow:
    grad = global_gradient(spec, worlds, x)
    dist_sq = None
    if spec.kind is ObjectiveKind.QUADRATIC:
        dist_sq = float(np.sum((x - x_star) ** 2))
    return MetricsRow(round=round, dist_sq_to_opt=dist_sq, grad_norm_sq=float(grad @ grad), **filter_stats)


def run_training(
    cfg: TrainConfig,
    spec: ObjectiveSpec,
    worlds: Sequence[LocalDataset],
    attack: AttackSpec,
    seed: int,
) -> TrainResult:
    """
    Run cfg.T rounds from x^0 = 0 and record one MetricsRow per round.

    Row t (1-based) describes x^t together with the filter statistics of the
    round that produced it; the trajectory also holds x^0. Given the same seed the
    trajectory is bit-identical for any thread count.

    Raises TrainingAborted (carrying the rows recorded so far) when the
    filter fails.
    """
    _check_consistent(cfg, worlds)
    R = len(worlds)
    d = worlds[0].dim
    if cfg.eps + cfg.eps_prime > MAX_EPS_TILDE:
        logger.warning(
            "eps + eps_prime = %.3g exceeds 1/4; the filter runs with eps_tilde = 1/4",
            cfg.eps + cfg.eps_prime,
        )

    curvature = curvature_constants(spec, worlds)
    probes = default_probes(stream(seed, "probe"), worlds, cfg.domain)
    kappa = measure_kappa(spec, worlds, probes, probe_ball(worlds, cfg.domain))
    if not math.isfinite(kappa.ball_bound):
        logger.warning("kappa has no finite ball bound; using the empirical value %.6g", kappa.empirical)
    sigma = measure_sigma(spec, worlds, probes)
    second_moment = None
    x_star = quadratic_optimum(worlds)

    k = cfg.k if cfg.k is not None else d
    if cfg.mode is TrainMode.FULL_GD:
        theory_sigma0_sq = default_sigma0_sq_full_batch(kappa.value)
        gamma = gamma_gd_bound(kappa.value, cfg.eps, cfg.upsilon_const)
    elif cfg.mode is TrainMode.SGD:
        theory_sigma0_sq = default_sigma0_sq(sigma, cfg.b, kappa.value, cfg.eps, cfg.eps_prime, d, R)
        gamma = gamma_bound(sigma, kappa.value, cfg.b, R, d, cfg.eps, cfg.eps_prime, cfg.upsilon_const)
    else:
        second_moment = measure_second_moment(spec, worlds, probes)
        if cfg.independent_coords:
            theory_sigma0_sq = _sigma0_sq_independent(
                second_moment, cfg.b, kappa.value, cfg.eps, cfg.eps_prime, d, k, R
            )
        else:
            theory_sigma0_sq = default_sigma0_sq_compressed(
                second_moment, cfg.b, kappa.value, cfg.eps, cfg.eps_prime, d, k, R
            )
        gamma = gamma_bound(
            sigma,
            kappa.value,
            cfg.b,
            R,
            d,
            cfg.eps,
            cfg.eps_prime,
            cfg.upsilon_const,
            sigma0_sq=theory_sigma0_sq,
        )
    sigma0_sq = cfg.sigma0_override if cfg.sigma0_override is not None else theory_sigma0_sq
    try:
        lr = learning_rate(cfg.lr_rule, curvature.L, curvature.mu, cfg.lr)
    except ValueError as exc:
        raise ConfigError(f"lr_rule = {cfg.lr_rule.value}: {exc}") from exc
    ceiling = theory_ceiling(cfg.mode, curvature.L, curvature.mu, gamma)
    p_fail = failure_probability(cfg.T, cfg.eps, cfg.eps_prime, R)

    logger.info(
        "training %s T=%d R=%d d=%d: L=%.4g mu=%.4g kappa=%.4g sigma=%.4g sigma0^2=%.4g lr=%.4g",
        cfg.mode.value,
        cfg.T,
        R,
        d,
        curvature.L,
        curvature.mu,
        kappa.value,
        sigma,
        sigma0_sq,
        lr,
    )

    x = np.zeros(d)
    trajectory = [x.copy()]
    metrics: List[MetricsRow] = []
    shared_coords = cfg.mode is TrainMode.COMPRESSED_SGD and not cfg.independent_coords
    executor = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None

    try:
        for t in range(cfg.T):
            coords = draw_coords(stream(seed, "master", t), d, k) if shared_coords else None
            corrupt = choose_corrupt_set(seed, t, R, attack)

            def work(r: int, x: ParameterPoint = x, coords: Optional[CoordinateSet] = coords) -> Vector:
                return _worker_gradient(cfg, spec, worlds[r], x, stream(seed, "worker", r, t), coords)

            if executor is not None:
                columns = list(executor.map(work, range(R)))
            else:
                columns = [work(r) for r in range(R)]
            honest_grads = np.stack(columns, axis=1)

            honest = np.setdiff1d(np.arange(R), corrupt)
            honest_mean = honest_grads[:, honest].mean(axis=1)
            context = AttackContext(
                round=t,
                honest_mean=honest_mean,
                rng=stream(seed, "attack_noise", t),
                coords=coords.array if coords is not None else None,
            )
            received = apply_attack(attack, honest_grads, corrupt, context)

            try:
                ghat, report = estimate(received, sigma0_sq, cfg.eps_tilde)
            except FilterError as exc:
                logger.error("filter failed at round %d: %s", t, exc)
                raise TrainingAborted(f"Filter failed at round {t}: {exc}", metrics, exc) from exc

            step = embed(ghat, coords, d) if coords is not None else ghat
            x = project(x - lr * step, cfg.domain)
            trajectory.append(x.copy())
            metrics.append(
                _row(
                    spec,
                    worlds,
                    x,
                    x_star,
                    t + 1,
                    est_error=float(np.linalg.norm(ghat - honest_mean)),
                    active_count=len(report.active_indices),
                    honest_removed=len(set(report.removed_indices) - set(corrupt.tolist())),
                    filter_rounds=report.rounds,
                    sum_c_tau_final=report.sum_c_tau_final,
                )
            )
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    logger.info("training finished: %s", metrics[-1])
    return TrainResult(
        trajectory=trajectory,
        metrics=metrics,
        x_star=x_star,
        curvature=curvature,
        kappa=kappa,
        sigma=sigma,
        second_moment=second_moment,
        sigma0_sq=sigma0_sq,
        lr=lr,
        gamma=gamma,
        ceiling=ceiling,
        failure_probability=p_fail,
    )
