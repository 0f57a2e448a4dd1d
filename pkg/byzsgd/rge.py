# byzsgd/rge.py

"""
Robust gradient estimation by spectral outlier filtering.

The master receives m gradient columns, some of which may be forged. Each
filter round solves the saddle problem

    min_W max_Y  sum_i c_i (g_i - G_A w_i)^T Y (g_i - G_A w_i)

over column-stochastic W with entries capped at (4 - alpha) / (alpha (2 + alpha) R)
and PSD Y of trace at most one. Columns that cannot be reconstructed from a
large enough share of the others get a high error tau_i; weights decay in
proportion to tau_i / tau_max and columns whose weight drops below 1/2 are
dropped. The loop stops once sum c_i tau_i <= 4 R sigma0^2 and the estimate is
the mean of the surviving columns.

Concentration diagnostics (largest eigenvalue of a point cloud's second
moment around a center) live here too.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from .errors import FilterCollapsedError, InfeasibleFilterError
from .linalg import RESIDUAL_TOL, SPECTRAL_MAX_ITER, gram_matvec, power_iteration

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]
GradientMatrix = npt.NDArray[np.float64]

MAX_ALTERNATIONS = 100
SADDLE_RTOL = 1e-8
MAX_EPS_TILDE = 0.25
FEASIBILITY_SLACK = 1e-12
# Phi below this multiple of sum c_i ||g_i||^2 is round-off
ROUNDOFF_FLOOR = 1e-24
FULL_BATCH_SLACK = 1e-9


# Concentration radius


def _check_fractions(eps: float, eps_prime: float) -> None:
    if eps_prime <= 0.0:
        raise ValueError(f"eps_prime must be positive, got {eps_prime}")
    if eps < 0.0 or eps + eps_prime >= 1.0:
        raise ValueError(f"Need 0 <= eps and eps + eps_prime < 1, got eps={eps}, eps_prime={eps_prime}")


def default_sigma0_sq(
    sigma: float, b: int, kappa: float, eps: float, eps_prime: float, d: int, R: int
) -> float:
    """24 sigma^2 / (b eps') (1 + d / ((1 - (eps + eps')) R)) + 16 kappa^2"""
    _check_fractions(eps, eps_prime)
    if b < 1:
        raise ValueError(f"Batch size must be >= 1, got {b}")
    honest = (1.0 - (eps + eps_prime)) * R
    return 24.0 * sigma**2 / (b * eps_prime) * (1.0 + d / honest) + 16.0 * kappa**2


def default_sigma0_sq_compressed(
    G2: float, b: int, kappa: float, eps: float, eps_prime: float, d: int, k: int, R: int
) -> float:
    """24 d G^2 / (k b eps') (1 + k / ((1 - (eps + eps')) R)) + 16 kappa^2"""
    _check_fractions(eps, eps_prime)
    if b < 1:
        raise ValueError(f"Batch size must be >= 1, got {b}")
    if not 1 <= k <= d:
        raise ValueError(f"k must satisfy 1 <= k <= d, got k={k}, d={d}")
    honest = (1.0 - (eps + eps_prime)) * R
    return 24.0 * d * G2 / (k * b * eps_prime) * (1.0 + k / honest) + 16.0 * kappa**2


def default_sigma0_sq_full_batch(kappa: float) -> float:
    """4 kappa^2: full local gradients deviate from their mean by at most that much"""
    return 4.0 * kappa**2


def filter_cap(alpha: float, R: int) -> float:
    """Per-entry cap on W: (4 - alpha) / (alpha (2 + alpha) R)"""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    return (4.0 - alpha) / (alpha * (2.0 + alpha) * R)


def min_active(alpha: float, R: int) -> int:
    """Smallest active set for which the capped simplex is non-empty"""
    return int(math.ceil(1.0 / filter_cap(alpha, R) - 1e-9))


# Saddle point


def _greedy_fill(count: int, cap: float) -> Vector:
    """Mass cap, cap, ..., remainder, 0, ... summing to one"""
    return np.clip(1.0 - cap * np.arange(count), 0.0, min(cap, 1.0))


def _extreme_weights(s: Vector, cap: float) -> Tuple[Vector, Vector]:
    n = s.shape[0]
    if n * cap < 1.0 - FEASIBILITY_SLACK:
        raise InfeasibleFilterError(f"Capped simplex is empty: {n} columns x cap {cap:.6g} < 1")
    order = np.argsort(s, kind="stable")
    fill = _greedy_fill(n, cap)
    w_min = np.zeros(n)
    w_max = np.zeros(n)
    w_min[order] = fill
    w_max[order[::-1]] = fill
    return w_min, w_max


def column_fit(s: Vector, t: float, cap: float) -> Tuple[Vector, float]:
    """
    Weights w in {w >= 0, sum w = 1, w <= cap} making <s, w> closest to t.

    The reachable values of <s, w> form [lo, hi], where lo (hi) puts mass cap
    on the smallest (largest) entries first. The returned w mixes those two
    greedy vectors to hit clamp(t, lo, hi).
    """
    if cap <= 0.0:
        raise ValueError(f"cap must be positive, got {cap}")
    s = np.asarray(s, dtype=float)
    if s.ndim != 1 or s.shape[0] == 0:
        raise ValueError("projections must be a non-empty vector")
    w_min, w_max = _extreme_weights(s, cap)
    lo = float(s @ w_min)
    hi = float(s @ w_max)
    fitted = min(max(t, lo), hi)
    if hi - lo <= 0.0:
        return w_min, lo
    theta = (hi - fitted) / (hi - lo)
    return theta * w_min + (1.0 - theta) * w_max, fitted


@dataclass(frozen=True, eq=False)
class SaddleSolution:
    """
    Approximate saddle point over the active columns.

    weights[:, i] is the reconstruction w_i of active column i; direction is
    v with Y = v v^T; phi = sum_i c_i tau_i. scale = sum_i c_i ||g_i||^2 sets
    the round-off floor the filter compares phi against.
    """

    weights: npt.NDArray[np.float64]
    direction: Vector
    tau: Vector
    phi: float
    scale: float
    iterations: int
    converged: bool


def _principal_residual(
    G: GradientMatrix, W: npt.NDArray[np.float64], sqrt_c: Vector
) -> Tuple[float, Vector]:
    """Y-step: top left singular pair of the c-weighted residual matrix"""
    M = (G - G @ W) * sqrt_c[None, :]
    U, S, _ = np.linalg.svd(M, full_matrices=False)
    if S.size == 0 or S[0] == 0.0:
        v = np.zeros(G.shape[0])
        v[0] = 1.0
        return 0.0, v
    return float(S[0] ** 2), U[:, 0].copy()


def _best_weights(G: GradientMatrix, v: Vector, cap: float) -> npt.NDArray[np.float64]:
    """W-step: column_fit for every column at once (lo, hi are shared)"""
    s = G.T @ v
    w_min, w_max = _extreme_weights(s, cap)
    lo = float(s @ w_min)
    hi = float(s @ w_max)
    if hi - lo <= 0.0:
        theta = np.ones(s.shape[0])
    else:
        theta = np.clip((hi - s) / (hi - lo), 0.0, 1.0)
    return np.outer(w_min, theta) + np.outer(w_max, 1.0 - theta)


def solve_saddle(
    G_A: GradientMatrix,
    c: Vector,
    cap: float,
    max_alternations: int = MAX_ALTERNATIONS,
    rtol: float = SADDLE_RTOL,
) -> SaddleSolution:
    """
    Alternate the Y-step (SVD) and the W-step (closed-form column fits).

    Starts from uniform W and keeps the iterate with the smallest Phi, since
    plain best-response alternation need not decrease monotonically.
    """
    G = np.asarray(G_A, dtype=float)
    c = np.asarray(c, dtype=float)
    if G.ndim != 2 or G.shape[1] == 0:
        raise ValueError(f"Expected a non-empty d x a gradient matrix, got shape {G.shape}")
    a = G.shape[1]
    if c.shape != (a,):
        raise ValueError(f"Expected {a} column weights, got shape {c.shape}")
    if a * cap < 1.0 - FEASIBILITY_SLACK:
        raise InfeasibleFilterError(f"Capped simplex is empty: {a} columns x cap {cap:.6g} < 1")

    sqrt_c = np.sqrt(np.clip(c, 0.0, None))
    W = np.full((a, a), 1.0 / a)
    phi, v = _principal_residual(G, W, sqrt_c)
    best_phi, best_W, best_v = phi, W, v

    iterations = 0
    converged = phi == 0.0
    while not converged and iterations < max_alternations:
        iterations += 1
        W = _best_weights(G, v, cap)
        new_phi, v = _principal_residual(G, W, sqrt_c)
        if new_phi < best_phi:
            best_phi, best_W, best_v = new_phi, W, v
        converged = abs(new_phi - phi) <= rtol * max(phi, new_phi) or new_phi == 0.0
        phi = new_phi

    if not converged:
        logger.debug("saddle alternation hit %d iterations (phi=%.6g)", max_alternations, best_phi)

    tau = (best_v @ (G - G @ best_W)) ** 2
    scale = float(np.sum(c * np.sum(G**2, axis=0)))
    return SaddleSolution(
        weights=best_W,
        direction=best_v,
        tau=tau,
        phi=float(np.sum(c * tau)),
        scale=scale,
        iterations=iterations,
        converged=converged,
    )


# Filter loop


@dataclass(frozen=True, eq=False)
class FilterState:
    """Column weights c (length m), the active index set and the filter parameters"""

    c: Vector
    active: Tuple[int, ...]
    alpha: float
    sigma0_sq: float
    rounds: int = 0

    def __post_init__(self) -> None:
        if self.sigma0_sq < 0.0:
            raise ValueError(f"sigma0_sq must be non-negative, got {self.sigma0_sq}")

    @classmethod
    def initial(cls, m: int, alpha: float, sigma0_sq: float) -> "FilterState":
        return cls(c=np.ones(m), active=tuple(range(m)), alpha=alpha, sigma0_sq=sigma0_sq)


def filter_round(state: FilterState, sol: SaddleSolution, R: int) -> Tuple[FilterState, bool]:
    """
    One down-weighting step. Returns (new_state, terminated).

    Terminates when sum c_i tau_i <= 4 R sigma0^2. Otherwise every active
    weight shrinks by the factor (1 - tau_i / tau_max), so all maximisers of
    tau drop to zero, and columns with c_i < 1/2 leave the active set.
    """
    active = np.asarray(state.active, dtype=np.int64)
    tau = np.asarray(sol.tau, dtype=float)
    if tau.shape != active.shape:
        raise ValueError(f"Solution has {tau.shape[0]} errors for {active.shape[0]} active columns")

    phi = float(np.sum(state.c[active] * tau))
    threshold = 4.0 * R * state.sigma0_sq
    if phi <= threshold + ROUNDOFF_FLOOR * sol.scale:
        return state, True

    tau_max = float(tau.max())
    if not tau_max > ROUNDOFF_FLOOR * sol.scale:
        raise FilterCollapsedError(
            f"Reconstruction errors vanished (tau_max={tau_max:.3g}) while "
            f"sum c*tau={phi:.6g} exceeds 4*R*sigma0^2={threshold:.6g}"
        )

    c = state.c.copy()
    c[active] = np.clip(c[active] * (1.0 - tau / tau_max), 0.0, 1.0)
    survivors = tuple(int(i) for i in active if c[i] >= 0.5)
    if not survivors:
        raise FilterCollapsedError(
            f"Active set emptied at round {state.rounds + 1}; sigma0^2={state.sigma0_sq:.6g} is "
            "too small for these gradients"
        )
    return replace(state, c=c, active=survivors, rounds=state.rounds + 1), False


@dataclass(frozen=True, eq=False)
class FilterReport:
    """Diagnostics of one estimate() call"""

    rounds: int
    active_indices: Tuple[int, ...]
    removed_indices: Tuple[int, ...]
    phi_trace: List[float] = field(default_factory=list)
    converged: bool = True
    sum_c_tau_final: float = 0.0
    weights: Optional[Vector] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rounds": self.rounds,
            "active_indices": list(self.active_indices),
            "removed_indices": list(self.removed_indices),
            "phi_trace": [float(p) for p in self.phi_trace],
            "converged": self.converged,
            "sum_c_tau_final": float(self.sum_c_tau_final),
        }


def estimate(
    G: GradientMatrix,
    sigma0_sq: float,
    eps_tilde: float,
) -> Tuple[Vector, FilterReport]:
    """
    Robust mean of the columns of G (d x m).

    Repeats solve_saddle + filter_round until the weighted reconstruction
    error is within 4 m sigma0^2, then averages the surviving columns. At most
    m rounds run, since each non-terminal round removes at least one column.

    Raises FilterCollapsedError if every column gets removed and
    InfeasibleFilterError if fewer than min_active(1 - eps_tilde, m) remain.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim != 2:
        raise ValueError(f"Gradient matrix must be 2-D (d x m), got shape {G.shape}")
    d, m = G.shape
    if m < 2 or d < 1:
        raise ValueError(f"Need at least two gradient columns of positive length, got shape {G.shape}")
    if not np.all(np.isfinite(G)):
        raise ValueError("Gradient matrix has non-finite entries")
    if not 0.0 <= eps_tilde <= MAX_EPS_TILDE:
        raise ValueError(f"eps_tilde must lie in [0, {MAX_EPS_TILDE}], got {eps_tilde}")

    alpha = 1.0 - eps_tilde
    cap = filter_cap(alpha, m)
    state = FilterState.initial(m, alpha, sigma0_sq)
    phi_trace: List[float] = []
    converged = True

    for _ in range(m + 1):
        active = np.asarray(state.active, dtype=np.int64)
        sol = solve_saddle(G[:, active], state.c[active], cap)
        phi_trace.append(sol.phi)
        converged = converged and sol.converged
        logger.debug(
            "filter round %d: |A|=%d phi=%.6g tau_max=%.6g",
            state.rounds,
            active.size,
            sol.phi,
            float(sol.tau.max()),
        )
        state, done = filter_round(state, sol, m)
        if done:
            break

    if not converged:
        logger.warning("saddle solver did not converge in some filter round; best iterates used")

    active = np.asarray(state.active, dtype=np.int64)
    ghat = G[:, active].mean(axis=1)
    removed = tuple(sorted(set(range(m)) - set(state.active)))
    report = FilterReport(
        rounds=state.rounds,
        active_indices=state.active,
        removed_indices=removed,
        phi_trace=phi_trace,
        converged=converged,
        sum_c_tau_final=phi_trace[-1],
        weights=state.c,
    )
    return ghat, report


# Concentration diagnostics


def max_eig_deviation(
    points: Union[Sequence[Vector], npt.NDArray[np.float64]],
    center: Vector,
    max_iter: int = SPECTRAL_MAX_ITER,
    tol: float = RESIDUAL_TOL,
) -> float:
    """lambda_max of (1/|S|) sum (g - center)(g - center)^T, points given as rows; stops on the eigen-residual"""
    rows = np.atleast_2d(np.asarray(points, dtype=float))
    if rows.shape[0] == 0:
        raise ValueError("max_eig_deviation needs at least one point")
    deviations = rows - np.asarray(center, dtype=float)[None, :]
    if not np.any(deviations):
        return 0.0
    top = power_iteration(gram_matvec(deviations), rows.shape[1], max_iter=max_iter, residual_tol=tol)
    return max(top.value, 0.0)


def full_batch_concentration_check(honest_grads: GradientMatrix, kappa: float) -> Tuple[float, bool]:
    """
    Check lambda_max <= 4 kappa^2 for full local gradients (d x m columns).

    kappa must be the dissimilarity measured at the same point the gradients
    were taken at.
    """
    G = np.asarray(honest_grads, dtype=float)
    if G.ndim != 2 or G.shape[1] == 0:
        raise ValueError(f"Expected a non-empty d x m gradient matrix, got shape {G.shape}")
    lam = max_eig_deviation(G.T, G.mean(axis=1))
    return lam, lam <= default_sigma0_sq_full_batch(kappa) + FULL_BATCH_SLACK
