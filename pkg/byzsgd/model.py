# byzsgd/model.py

"""
Objectives and gradient oracles for the simulated federation.

Each worker r holds a LocalDataset of (feature, response) pairs. The per-sample
loss is least-squares regression 0.5 * (<w, x> - y)^2; the non-convex objective
adds the smooth bounded-curvature penalty lam * sum_j x_j^2 / (1 + x_j^2) to
every per-sample loss, so local and global means carry it exactly once.

Besides the oracles this module measures the constants the convergence
analysis is stated in: smoothness L, strong convexity mu, local variance
sigma, gradient dissimilarity kappa and the second moment G^2.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
import numpy.typing as npt

from .linalg import RESIDUAL_TOL, SPECTRAL_MAX_ITER, power_iteration

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]
Matrix = npt.NDArray[np.float64]
ParameterPoint = Vector

DEGENERATE_RATIO = 1e-12


class ObjectiveKind(Enum):
    """Built-in objective families"""

    QUADRATIC = "strongly-convex-quadratic"
    NONCONVEX = "smooth-nonconvex"


@dataclass(frozen=True)
class ObjectiveSpec:
    """Objective family plus the weight of the non-convex penalty"""

    kind: ObjectiveKind = ObjectiveKind.QUADRATIC
    reg_weight: float = 0.0

    def __post_init__(self) -> None:
        if self.reg_weight < 0 or not math.isfinite(self.reg_weight):
            raise ValueError(f"reg_weight must be finite and >= 0, got {self.reg_weight}")

    @property
    def penalty(self) -> float:
        """Penalty weight actually applied (zero for the quadratic kind)"""
        return self.reg_weight if self.kind is ObjectiveKind.NONCONVEX else 0.0


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Euclidean ball {x : ||x - center|| <= radius}; radius=inf is all of R^d"""

    radius: float = math.inf
    center: Optional[Vector] = None

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"Domain radius must be positive, got {self.radius}")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.radius)

    def center_for(self, dim: int) -> Vector:
        if self.center is None:
            return np.zeros(dim)
        center = np.asarray(self.center, dtype=float)
        if center.shape != (dim,):
            raise ValueError(f"Domain center has shape {center.shape}, expected ({dim},)")
        return center


@dataclass(frozen=True, eq=False)
class LocalDataset:
    """Samples held by one worker: features (n, p) and responses (n,)"""

    features: Matrix
    responses: Vector
    _gram: Matrix = field(init=False, repr=False, compare=False)
    _moment: Vector = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        responses = np.asarray(self.responses, dtype=float).reshape(-1)
        if features.shape[0] < 1:
            raise ValueError("LocalDataset needs at least one sample")
        if features.shape[0] != responses.shape[0]:
            raise ValueError(
                f"{features.shape[0]} feature rows but {responses.shape[0]} responses"
            )
        if not (np.all(np.isfinite(features)) and np.all(np.isfinite(responses))):
            raise ValueError("LocalDataset entries must be finite")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "responses", responses)
        n = features.shape[0]
        object.__setattr__(self, "_gram", features.T @ features / n)
        object.__setattr__(self, "_moment", features.T @ responses / n)

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def hessian(self) -> Matrix:
        """(1/n) sum_i w_i w_i^T, the Hessian of the local data term"""
        return self._gram

    @property
    def moment(self) -> Vector:
        """(1/n) sum_i y_i w_i"""
        return self._moment


def _check_worlds(worlds: Sequence[LocalDataset]) -> None:
    if len(worlds) == 0:
        raise ValueError("At least one worker dataset is required")
    dims = {ds.dim for ds in worlds}
    if len(dims) != 1:
        raise ValueError(f"Worker datasets disagree on dimension: {sorted(dims)}")


def _penalty_grad(spec: ObjectiveSpec, x: Vector) -> Vector:
    lam = spec.penalty
    if lam == 0.0:
        return np.zeros_like(x)
    return lam * 2.0 * x / (1.0 + x * x) ** 2


def _penalty_value(spec: ObjectiveSpec, x: Vector) -> float:
    lam = spec.penalty
    if lam == 0.0:
        return 0.0
    return float(lam * np.sum(x * x / (1.0 + x * x)))


# Gradient oracles


def per_sample_gradient(
    spec: ObjectiveSpec, ds: LocalDataset, i: int, x: ParameterPoint
) -> Vector:
    """Gradient of the i-th sample loss (zero-based index) at x"""
    if not 0 <= i < ds.n:
        raise IndexError(f"Sample index {i} out of range for n_r={ds.n}")
    w = ds.features[i]
    residual = float(w @ x) - float(ds.responses[i])
    return residual * w + _penalty_grad(spec, x)


def per_sample_gradients(spec: ObjectiveSpec, ds: LocalDataset, x: ParameterPoint) -> Matrix:
    """All per-sample gradients at x as an (n, d) matrix"""
    residuals = ds.features @ x - ds.responses
    return residuals[:, None] * ds.features + _penalty_grad(spec, x)[None, :]


def subset_gradient(
    spec: ObjectiveSpec, ds: LocalDataset, indices: Sequence[int], x: ParameterPoint
) -> Vector:
    """Mean of per-sample gradients over ``indices``"""
    idx = np.asarray(indices, dtype=int)
    if idx.size == 0:
        raise ValueError("Empty index set")
    feats = ds.features[idx]
    residuals = feats @ x - ds.responses[idx]
    return feats.T @ residuals / idx.size + _penalty_grad(spec, x)


def local_full_gradient(spec: ObjectiveSpec, ds: LocalDataset, x: ParameterPoint) -> Vector:
    if ds.n < 1:
        raise ValueError("Empty dataset")
    return ds.hessian @ x - ds.moment + _penalty_grad(spec, x)


def global_gradient(
    spec: ObjectiveSpec, worlds: Sequence[LocalDataset], x: ParameterPoint
) -> Vector:
    """(1/R) sum_r grad F_r(x)"""
    _check_worlds(worlds)
    total = np.zeros_like(np.asarray(x, dtype=float))
    for ds in worlds:
        total += local_full_gradient(spec, ds, x)
    return total / len(worlds)


def local_loss(spec: ObjectiveSpec, ds: LocalDataset, x: ParameterPoint) -> float:
    residuals = ds.features @ x - ds.responses
    return float(0.5 * np.mean(residuals**2)) + _penalty_value(spec, x)


def global_loss(spec: ObjectiveSpec, worlds: Sequence[LocalDataset], x: ParameterPoint) -> float:
    _check_worlds(worlds)
    return float(np.mean([local_loss(spec, ds, x) for ds in worlds]))


# Mini-batches


def sample_without_replacement(rng: np.random.Generator, n: int, b: int) -> npt.NDArray[np.int64]:
    """
    Uniform size-b subset of range(n) by a partial Fisher-Yates shuffle.

    Consumes exactly b draws from ``rng``; returned indices are in draw order.
    """
    if not 1 <= b <= n:
        raise ValueError(f"Batch size must satisfy 1 <= b <= n_r, got b={b}, n_r={n}")
    pool = np.arange(n)
    for j in range(b):
        k = int(rng.integers(j, n))
        pool[j], pool[k] = pool[k], pool[j]
    return pool[:b].copy()


def minibatch_gradient(
    rng: np.random.Generator,
    spec: ObjectiveSpec,
    ds: LocalDataset,
    b: int,
    x: ParameterPoint,
) -> Vector:
    """Mean per-sample gradient over a uniform size-b subset drawn without replacement"""
    if not 1 <= b <= ds.n:
        raise ValueError(f"Batch size must satisfy 1 <= b <= n_r, got b={b}, n_r={ds.n}")
    if b == ds.n:
        return local_full_gradient(spec, ds, x)
    return subset_gradient(spec, ds, sample_without_replacement(rng, ds.n, b), x)


# Domain


def project(x: ParameterPoint, dom: DomainSpec) -> ParameterPoint:
    """Euclidean projection onto the domain ball"""
    x = np.asarray(x, dtype=float)
    if not dom.bounded:
        return x.copy()
    center = dom.center_for(x.shape[0])
    offset = x - center
    dist = float(np.linalg.norm(offset))
    if dist <= dom.radius:
        return x.copy()
    return center + offset * (dom.radius / dist)


# Measured constants


@dataclass(frozen=True)
class Curvature:
    """Smoothness and strong-convexity constants of the global objective"""

    L: float
    mu: float
    degenerate: bool = False


def global_hessian(worlds: Sequence[LocalDataset]) -> Matrix:
    """(1/R) sum_r H_r of the data term (dense, d x d)"""
    _check_worlds(worlds)
    return np.mean([ds.hessian for ds in worlds], axis=0)


def curvature_constants(
    spec: ObjectiveSpec,
    worlds: Sequence[LocalDataset],
    max_iter: int = SPECTRAL_MAX_ITER,
    tol: float = RESIDUAL_TOL,
) -> Curvature:
    """
    L and mu of the global data Hessian by power iteration.

    Both runs stop on the eigen-residual (``tol`` relative to L). mu is the
    Rayleigh quotient on H of the top eigenvector of L*I - H, which is accurate
    to about the squared residual. For the non-convex objective L grows by
    2*lam (the penalty's curvature lies in [-lam/2, 2*lam]) and mu is reported
    as 0.
    """
    _check_worlds(worlds)
    dim = worlds[0].dim
    H = global_hessian(worlds)

    def hess(u: Vector) -> Vector:
        return np.asarray(H @ u, dtype=float)

    top = power_iteration(hess, dim, max_iter=max_iter, seed=0, residual_tol=tol)
    L = max(top.value, 0.0)

    if spec.kind is ObjectiveKind.NONCONVEX:
        return Curvature(L=L + 2.0 * spec.penalty, mu=0.0)

    if L == 0.0:
        logger.warning("All features are zero; curvature is degenerate")
        return Curvature(L=0.0, mu=0.0, degenerate=True)

    shifted = power_iteration(
        lambda u: L * u - hess(u), dim, max_iter=max_iter, seed=1, residual_tol=tol, scale=L
    )
    if not (top.converged and shifted.converged):
        logger.warning("curvature power iterations hit max_iter=%d; L and mu are approximate", max_iter)
    v = shifted.vector
    mu = float(v @ hess(v)) / float(v @ v)
    if mu <= DEGENERATE_RATIO * L:
        logger.warning("Global Hessian is rank deficient; mu set to 0")
        return Curvature(L=L, mu=0.0, degenerate=True)
    return Curvature(L=L, mu=mu)


def quadratic_optimum(worlds: Sequence[LocalDataset]) -> ParameterPoint:
    """Normal-equation minimiser of the data term (minimum-norm when singular)"""
    H = global_hessian(worlds)
    rhs = np.mean([ds.moment for ds in worlds], axis=0)
    try:
        return np.asarray(np.linalg.solve(H, rhs), dtype=float)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(H, rhs, rcond=None)
        return np.asarray(sol, dtype=float)


def uniform_in_ball(rng: np.random.Generator, center: Vector, radius: float, count: int) -> Matrix:
    dim = center.shape[0]
    directions = rng.standard_normal((count, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(count) ** (1.0 / dim)
    return center[None, :] + directions * radii[:, None]


def probe_ball(worlds: Sequence[LocalDataset], dom: DomainSpec) -> DomainSpec:
    """
    Ball over which sup-over-domain constants are measured.

    The configured domain when bounded, otherwise the ball around x* of radius
    max(1, ||x*||), which contains x^0 = 0 and every iterate of a contraction
    towards x*.
    """
    if dom.bounded:
        return dom
    x_star = quadratic_optimum(worlds)
    return DomainSpec(radius=max(1.0, float(np.linalg.norm(x_star))), center=x_star)


def default_probes(
    rng: np.random.Generator,
    worlds: Sequence[LocalDataset],
    dom: DomainSpec,
    count: int = 16,
) -> List[ParameterPoint]:
    """Origin, quadratic optimum, and ``count`` seeded uniform points of the probe ball"""
    _check_worlds(worlds)
    dim = worlds[0].dim
    ball = probe_ball(worlds, dom)
    points = [np.zeros(dim), quadratic_optimum(worlds)]
    points.extend(uniform_in_ball(rng, ball.center_for(dim), ball.radius, count))
    return points


@dataclass(frozen=True)
class KappaEstimate:
    """
    Gradient dissimilarity measurements.

    empirical: max over workers and probes of ||grad F_r(x) - grad F(x)||, a
    lower estimate of kappa. ball_bound: upper bound of the same quantity over
    the whole ball (inf when the ball is unbounded and the Hessians differ).
    """

    empirical: float
    ball_bound: float

    @property
    def value(self) -> float:
        """Best usable kappa: the ball bound when finite, else the empirical one"""
        return self.ball_bound if math.isfinite(self.ball_bound) else self.empirical


def measure_kappa(
    spec: ObjectiveSpec,
    worlds: Sequence[LocalDataset],
    probes: Sequence[ParameterPoint],
    dom: Optional[DomainSpec] = None,
) -> KappaEstimate:
    """
    Empirical kappa over ``probes`` plus the closed-form ball bound.

    grad F_r - grad F = A_r x - e_r with A_r = H_r - H, e_r = b_r - b (the
    penalty cancels), so on ||x - c|| <= rho the deviation is at most
    ||A_r c - e_r|| + ||A_r||_2 * rho.
    """
    _check_worlds(worlds)
    if len(probes) == 0:
        raise ValueError("measure_kappa needs at least one probe point")

    empirical = 0.0
    for x in probes:
        g = global_gradient(spec, worlds, x)
        for ds in worlds:
            empirical = max(empirical, float(np.linalg.norm(local_full_gradient(spec, ds, x) - g)))

    dom = dom if dom is not None else DomainSpec()
    dim = worlds[0].dim
    center = dom.center_for(dim)
    H = global_hessian(worlds)
    b = np.mean([ds.moment for ds in worlds], axis=0)
    bound = 0.0
    for ds in worlds:
        A = ds.hessian - H
        e = ds.moment - b
        spread = float(np.linalg.norm(A, 2))
        offset = float(np.linalg.norm(A @ center - e))
        if spread <= DEGENERATE_RATIO * max(1.0, float(np.linalg.norm(H, 2))):
            bound = max(bound, offset)
        elif dom.bounded:
            bound = max(bound, offset + spread * dom.radius)
        else:
            bound = math.inf
    return KappaEstimate(empirical=empirical, ball_bound=max(bound, empirical))


def measure_sigma(
    spec: ObjectiveSpec,
    worlds: Sequence[LocalDataset],
    probes: Sequence[ParameterPoint],
) -> float:
    """max over workers and probes of sqrt((1/n_r) sum_i ||grad F_{r,i} - grad F_r||^2)"""
    _check_worlds(worlds)
    if len(probes) == 0:
        raise ValueError("measure_sigma needs at least one probe point")
    worst = 0.0
    for x in probes:
        for ds in worlds:
            grads = per_sample_gradients(spec, ds, x)
            centered = grads - grads.mean(axis=0, keepdims=True)
            worst = max(worst, float(np.mean(np.sum(centered**2, axis=1))))
    return math.sqrt(worst)


def measure_second_moment(
    spec: ObjectiveSpec,
    worlds: Sequence[LocalDataset],
    probes: Sequence[ParameterPoint],
) -> float:
    """G^2 estimate: max over workers and probes of (1/n_r) sum_i ||grad F_{r,i}(x)||^2"""
    _check_worlds(worlds)
    if len(probes) == 0:
        raise ValueError("measure_second_moment needs at least one probe point")
    worst = 0.0
    for x in probes:
        for ds in worlds:
            grads = per_sample_gradients(spec, ds, x)
            worst = max(worst, float(np.mean(np.sum(grads**2, axis=1))))
    return worst
