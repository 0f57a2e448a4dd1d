# byzsgd/linalg.py

"""
Matrix-free spectral helpers.

Power iteration on a symmetric positive semi-definite operator given only as a
matrix-vector product, so covariance-type operators of shape d x d are never
materialised.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import numpy.typing as npt

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]
MatVec = Callable[[Vector], Vector]

DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-10
# budget and eigen-residual tolerance for accurate constants
SPECTRAL_MAX_ITER = 20_000
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class EigenPair:
    """Top eigenpair estimate of a PSD operator"""

    value: float
    vector: Vector
    iterations: int
    converged: bool


def power_iteration(
    matvec: MatVec,
    dim: int,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    residual_tol: Optional[float] = None,
    scale: Optional[float] = None,
) -> EigenPair:
    """
    Largest eigenpair of the PSD operator ``matvec`` acting on R^dim.

    By default stops when the Rayleigh quotient changes by less than ``tol``
    relative. With ``residual_tol`` it instead stops once the eigen-residual
    ||A x - lambda x|| drops below ``residual_tol * scale`` (``scale`` defaults
    to |lambda|); the error of lambda is then at most the residual, and its
    square over the spectral gap when the gap is large. Either way the run ends
    after ``max_iter`` products. The start vector comes from a fixed seed so
    results are reproducible.
    """
    if dim < 1:
        raise ValueError(f"Operator dimension must be positive, got {dim}")

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(dim)
    x /= np.linalg.norm(x)

    tiny = np.finfo(float).tiny
    lam = 0.0
    for it in range(1, max_iter + 1):
        y = matvec(x)
        y_norm = float(np.linalg.norm(y))
        if y_norm == 0.0:
            # x lies in the null space; for a PSD operator with a zero image
            # of a random vector the operator is zero almost surely
            return EigenPair(0.0, x, it, True)

        lam_new = float(x @ y)
        if residual_tol is not None:
            reference = abs(lam_new) if scale is None else scale
            if float(np.linalg.norm(y - lam_new * x)) <= residual_tol * max(reference, tiny):
                return EigenPair(lam_new, x, it, True)
        elif abs(lam_new - lam) <= tol * max(abs(lam_new), tiny):
            return EigenPair(lam_new, y / y_norm, it, True)
        x = y / y_norm
        lam = lam_new

    logger.debug("power iteration stopped at max_iter=%d (lambda=%.6g)", max_iter, lam)
    return EigenPair(lam, x, max_iter, False)


def gram_matvec(rows: npt.NDArray[np.float64]) -> MatVec:
    """Operator u -> (1/n) D^T D u for the n x d matrix D, without forming D^T D"""
    n = rows.shape[0]

    def apply(u: Vector) -> Vector:
        return rows.T @ (rows @ u) / n

    return apply
