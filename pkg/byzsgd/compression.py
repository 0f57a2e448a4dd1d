# byzsgd/compression.py

"""
rand-k sparsification with master-chosen coordinates.

Every round the master draws one coordinate set K of size k and broadcasts it;
workers send (d/k) * select_K(g), i.e. only the k retained entries. The decoder
then works on the k-dimensional restriction and its estimate is re-embedded
into R^d with zeros outside K.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import numpy.typing as npt

from .model import LocalDataset, ObjectiveSpec, ParameterPoint, minibatch_gradient, sample_without_replacement

Vector = npt.NDArray[np.float64]


@dataclass(frozen=True)
class CoordinateSet:
    """Sorted distinct coordinates of [0, d)"""

    indices: Tuple[int, ...]
    d: int

    def __post_init__(self) -> None:
        k = len(self.indices)
        if not 1 <= k <= self.d:
            raise ValueError(f"Coordinate set size must satisfy 1 <= k <= d, got k={k}, d={self.d}")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError("Coordinate indices must be strictly increasing")
        if self.indices[0] < 0 or self.indices[-1] >= self.d:
            raise ValueError(f"Coordinates must lie in [0, {self.d})")

    @property
    def k(self) -> int:
        return len(self.indices)

    @property
    def array(self) -> npt.NDArray[np.int64]:
        return np.asarray(self.indices, dtype=np.int64)

    @classmethod
    def full(cls, d: int) -> "CoordinateSet":
        return cls(tuple(range(d)), d)


def draw_coords(rng: np.random.Generator, d: int, k: int) -> CoordinateSet:
    """Uniform size-k subset of [0, d)"""
    if not 1 <= k <= d:
        raise ValueError(f"k must satisfy 1 <= k <= d, got k={k}, d={d}")
    chosen = sample_without_replacement(rng, d, k)
    return CoordinateSet(tuple(int(i) for i in np.sort(chosen)), d)


def select_scale(v: Vector, K: CoordinateSet, d: int, k: int) -> Vector:
    """(d/k) * select_K(v): entries outside K zeroed, entries inside scaled"""
    if K.d != d or K.k != k:
        raise ValueError(f"Coordinate set is for (d={K.d}, k={K.k}), not (d={d}, k={k})")
    out = np.zeros(d)
    idx = K.array
    out[idx] = (d / k) * np.asarray(v, dtype=float)[idx]
    return out


def restrict(v: Vector, K: CoordinateSet) -> Vector:
    """The k retained entries of v, in coordinate order"""
    return np.asarray(v, dtype=float)[K.array].copy()


def embed(values: Vector, K: CoordinateSet, d: int) -> Vector:
    """Place a k-vector back into R^d, zeros outside K"""
    values = np.asarray(values, dtype=float)
    if values.shape != (K.k,):
        raise ValueError(f"Expected {K.k} values, got shape {values.shape}")
    out = np.zeros(d)
    out[K.array] = values
    return out


def compressed_minibatch_gradient(
    rng: np.random.Generator,
    spec: ObjectiveSpec,
    ds: LocalDataset,
    b: int,
    x: ParameterPoint,
    K: CoordinateSet,
) -> Vector:
    """(d/k) * select_K of a size-b mini-batch gradient"""
    d = ds.dim
    return select_scale(minibatch_gradient(rng, spec, ds, b, x), K, d, K.k)
