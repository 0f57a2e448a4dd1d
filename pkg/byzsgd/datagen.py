# byzsgd/datagen.py

"""
Synthetic heterogeneous federations.

Worker r draws i.i.d. linear-regression samples around its own parameter
x*_r = base + delta_r: features ~ N(0, Sigma), y = <w, x*_r> + N(0, noise^2).
The shifts delta_r are placed deterministically on the sphere of radius
shift_radius along +/- coordinate axes, so the population heterogeneity
kappa_mean = max_r ||Sigma (mean(delta) - delta_r)|| is exactly controllable.

Also builds planted gradient matrices (Gaussian inliers plus attacked
columns) for exercising the robust estimator directly.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt

from .attacks import AttackContext, AttackKind, AttackSpec, apply_attack
from .model import LocalDataset

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]
Matrix = npt.NDArray[np.float64]

PSD_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class HeteroModelSpec:
    """Parameters of the statistical heterogeneous model"""

    d: int
    R: int
    n: int
    feature_cov: Optional[Matrix] = None
    noise_std: float = 0.0
    shift_radius: float = 0.0
    base_param: Optional[Vector] = None
    _factor: Matrix = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.d < 1 or self.R < 1 or self.n < 1:
            raise ValueError(f"d, R and n must be >= 1, got d={self.d}, R={self.R}, n={self.n}")
        if self.noise_std < 0 or self.shift_radius < 0:
            raise ValueError("noise_std and shift_radius must be non-negative")
        cov = self.covariance
        if cov.shape != (self.d, self.d) or not np.allclose(cov, cov.T):
            raise ValueError("feature_cov must be a symmetric d x d matrix")
        eigvals, eigvecs = np.linalg.eigh(cov)
        if eigvals.min() < -PSD_TOLERANCE * max(1.0, float(np.abs(eigvals).max())):
            raise ValueError(f"feature_cov is not PSD (min eigenvalue {eigvals.min():.3g})")
        factor = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))[None, :]
        object.__setattr__(self, "_factor", factor)

    @property
    def covariance(self) -> Matrix:
        if self.feature_cov is None:
            return np.eye(self.d)
        return np.asarray(self.feature_cov, dtype=float)

    @property
    def base(self) -> Vector:
        if self.base_param is None:
            return np.zeros(self.d)
        return np.asarray(self.base_param, dtype=float)

    @property
    def factor(self) -> Matrix:
        """F with F F^T = feature_cov"""
        return self._factor


class Federation(NamedTuple):
    worlds: List[LocalDataset]
    truths: List[Vector]
    shifts: Matrix


def sphere_shifts(R: int, d: int, radius: float) -> Matrix:
    """
    R x d shifts of norm ``radius`` along alternating coordinate axes.

    Worker 0 sits on +e_0, worker 1 on -e_0, worker 2 on +e_1, and so on,
    wrapping after 2d workers; an even R <= 2d gives a zero mean shift.
    """
    shifts = np.zeros((R, d))
    if radius == 0.0:
        return shifts
    for r in range(R):
        axis = (r // 2) % d
        shifts[r, axis] = radius if r % 2 == 0 else -radius
    return shifts


def generate(rng: np.random.Generator, spec: HeteroModelSpec) -> Federation:
    """Draw R local datasets of n samples each; deterministic given ``rng``"""
    shifts = sphere_shifts(spec.R, spec.d, spec.shift_radius)
    truths = [spec.base + shifts[r] for r in range(spec.R)]
    worlds = []
    for r in range(spec.R):
        features = rng.standard_normal((spec.n, spec.d)) @ spec.factor.T
        noise = spec.noise_std * rng.standard_normal(spec.n)
        worlds.append(LocalDataset(features, features @ truths[r] + noise))
    logger.debug(
        "generated federation R=%d n=%d d=%d shift_radius=%g", spec.R, spec.n, spec.d, spec.shift_radius
    )
    return Federation(worlds, truths, shifts)


def homogeneous(worlds: Sequence[LocalDataset], R: int) -> List[LocalDataset]:
    """R copies of the first dataset (kappa = 0 federations)"""
    return [worlds[0]] * R


def kappa_mean_theoretical(spec: HeteroModelSpec, shifts: Matrix) -> float:
    """max_r ||Sigma (mean(delta) - delta_r)||, independent of x for this model"""
    shifts = np.atleast_2d(np.asarray(shifts, dtype=float))
    if shifts.shape[0] == 0:
        return 0.0
    deviations = (shifts.mean(axis=0, keepdims=True) - shifts) @ spec.covariance.T
    return float(np.max(np.linalg.norm(deviations, axis=1)))


# CSV dump / load


def save_worlds_csv(worlds: Sequence[LocalDataset], directory: Union[str, Path]) -> List[Path]:
    """One ``worker_XXX.csv`` per worker: w0..w{p-1},y columns with a header row"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for r, ds in enumerate(worlds):
        path = directory / f"worker_{r:03d}.csv"
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow([f"w{j}" for j in range(ds.dim)] + ["y"])
            for w, y in zip(ds.features, ds.responses):
                writer.writerow([repr(float(v)) for v in w] + [repr(float(y))])
        paths.append(path)
    return paths


def load_worlds_csv(directory: Union[str, Path]) -> List[LocalDataset]:
    directory = Path(directory)
    paths = sorted(directory.glob("worker_*.csv"))
    if not paths:
        raise FileNotFoundError(f"No worker_*.csv files in {directory}")
    worlds = []
    for path in paths:
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        worlds.append(LocalDataset(table[:, :-1], table[:, -1]))
    return worlds


# Planted gradient matrices


class PlantedInstance(NamedTuple):
    grads: Matrix
    corrupt: npt.NDArray[np.int64]
    inlier_mean: Vector
    naive_error: float


def planted_gradients(
    rng: np.random.Generator,
    R: int,
    d: int,
    sigma0: float,
    eps_tilde: float,
    kind: AttackKind = AttackKind.OMNISCIENT_SHIFT,
    distance: float = 50.0,
) -> PlantedInstance:
    """
    d x R matrix of N(mu, sigma0^2 I) inliers with floor(eps_tilde R) attacked columns.

    ``distance`` is measured in units of sigma0: omniscient_shift places the
    colluding columns that far from the inlier mean, sign_flip uses an inlier
    mean of half that norm so flipped columns land at about that distance, and
    constant / gaussian_noise attacks are scaled to it.
    """
    offset = distance * sigma0
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    mu = 0.5 * offset * direction if kind is AttackKind.SIGN_FLIP else 10.0 * sigma0 * direction
    honest = mu[:, None] + sigma0 * rng.standard_normal((d, R))

    count = int(math.floor(eps_tilde * R + 1e-9))
    corrupt = np.sort(rng.permutation(R)[:count]).astype(np.int64)
    inliers = np.setdiff1d(np.arange(R), corrupt)
    inlier_mean = honest[:, inliers].mean(axis=1)

    if kind is AttackKind.SIGN_FLIP:
        spec = AttackSpec(kind=kind, scale=1.0)
    elif kind is AttackKind.CONSTANT:
        spec = AttackSpec(kind=kind, vector=mu + offset * direction)
    elif kind is AttackKind.GAUSSIAN_NOISE:
        spec = AttackSpec(kind=kind, scale=offset / math.sqrt(d))
    else:
        spec = AttackSpec(kind=kind, scale=offset)
    grads = apply_attack(spec, honest, corrupt, AttackContext(honest_mean=inlier_mean, rng=rng))
    naive_error = float(np.linalg.norm(grads.mean(axis=1) - inlier_mean))
    return PlantedInstance(grads, corrupt, inlier_mean, naive_error)
