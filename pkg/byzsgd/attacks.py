# byzsgd/attacks.py

"""
Byzantine adversary models.

An adversary corrupts floor(eps * R) workers. A static adversary fixes its set
once (round 0); a mobile one re-draws it every round, before that round's
gradients exist. Corrupt workers replace their column of the gradient matrix
according to one of the strategies in AttackKind.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Optional, Sequence

import numpy as np
import numpy.typing as npt

from .seeding import stream

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]
GradientMatrix = npt.NDArray[np.float64]
IndexSet = npt.NDArray[np.int64]


class AttackKind(Enum):
    """Gradient-replacement strategies"""

    NONE = "none"
    GAUSSIAN_NOISE = "gaussian_noise"
    SIGN_FLIP = "sign_flip"
    CONSTANT = "constant"
    OMNISCIENT_SHIFT = "omniscient_shift"


@dataclass(frozen=True, eq=False)
class AttackSpec:
    """Attack strategy, its strength, the corrupted fraction and mobility"""

    kind: AttackKind = AttackKind.NONE
    scale: float = 1.0
    vector: Optional[Vector] = None
    mobile: bool = False
    eps: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.eps < 0.5:
            raise ValueError(f"Corrupt fraction must lie in [0, 1/2), got {self.eps}")
        if not math.isfinite(self.scale):
            raise ValueError(f"Attack scale must be finite, got {self.scale}")

    def corrupt_count(self, R: int) -> int:
        """floor(eps * R), robust to binary round-off in eps * R"""
        return int(math.floor(self.eps * R + 1e-9))

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "AttackSpec":
        """Build from config values: kind, scale, vector (comma list), mobile, eps"""
        vector = values.get("vector")
        if isinstance(vector, str):
            vector = np.array([float(v) for v in vector.split(",") if v.strip()])
        return cls(
            kind=AttackKind(values.get("kind", "none")),
            scale=float(values.get("scale", 1.0)),
            vector=None if vector is None else np.asarray(vector, dtype=float),
            mobile=bool(values.get("mobile", False)),
            eps=float(values.get("eps", 0.0)),
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "scale": self.scale,
            "vector": None if self.vector is None else [float(v) for v in self.vector],
            "mobile": self.mobile,
            "eps": self.eps,
        }


@dataclass(frozen=True, eq=False)
class AttackContext:
    """
    What corrupt workers may see when forging their vectors.

    honest_mean is the current round's mean of the honest columns; coords
    restricts a full-length constant vector to the coordinates being sent.
    """

    round: int = 0
    honest_mean: Optional[Vector] = None
    rng: Optional[np.random.Generator] = None
    coords: Optional[npt.NDArray[np.int64]] = None


def choose_corrupt_set(adv_seed: int, round: int, R: int, spec: AttackSpec) -> IndexSet:
    """
    Sorted indices of the corrupt workers for ``round``.

    Randomness comes from the adversary stream of ``adv_seed``, keyed by the
    round for mobile adversaries and by round 0 for static ones, so worker
    sampling streams are never touched.
    """
    count = spec.corrupt_count(R)
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    rng = stream(adv_seed, "adversary", round if spec.mobile else 0)
    return np.sort(rng.permutation(R)[:count]).astype(np.int64)


def apply_attack(
    spec: AttackSpec,
    honest_grads: GradientMatrix,
    corrupt: Sequence[int],
    context: Optional[AttackContext] = None,
) -> GradientMatrix:
    """Return a copy of ``honest_grads`` (d x m) with the corrupt columns replaced"""
    grads = np.array(honest_grads, dtype=float, copy=True)
    corrupt_idx = np.asarray(corrupt, dtype=np.int64)
    if spec.kind is AttackKind.NONE or corrupt_idx.size == 0:
        return grads

    d, m = grads.shape
    if np.any(corrupt_idx < 0) or np.any(corrupt_idx >= m):
        raise IndexError(f"Corrupt indices {corrupt_idx.tolist()} outside [0, {m})")
    context = context or AttackContext()

    if spec.kind is AttackKind.GAUSSIAN_NOISE:
        rng = context.rng if context.rng is not None else np.random.default_rng(context.round)
        noise = rng.standard_normal((d, corrupt_idx.size))
        grads[:, corrupt_idx] = grads[:, corrupt_idx] + spec.scale * noise
    elif spec.kind is AttackKind.SIGN_FLIP:
        grads[:, corrupt_idx] = -spec.scale * grads[:, corrupt_idx]
    elif spec.kind is AttackKind.CONSTANT:
        grads[:, corrupt_idx] = _constant_vector(spec, d, context)[:, None]
    elif spec.kind is AttackKind.OMNISCIENT_SHIFT:
        mean = context.honest_mean
        if mean is None:
            honest = np.setdiff1d(np.arange(m), corrupt_idx)
            mean = grads[:, honest].mean(axis=1) if honest.size else np.zeros(d)
        norm = float(np.linalg.norm(mean))
        if norm > 0.0:
            direction = -mean / norm
        else:
            direction = np.zeros(d)
            direction[0] = 1.0
        grads[:, corrupt_idx] = (mean + spec.scale * direction)[:, None]
    return grads


def _constant_vector(spec: AttackSpec, d: int, context: AttackContext) -> Vector:
    if spec.vector is None:
        return np.full(d, spec.scale)
    vector = np.asarray(spec.vector, dtype=float)
    if vector.shape[0] == d:
        return vector
    if context.coords is not None and vector.shape[0] > d:
        return vector[context.coords]
    raise ValueError(f"Constant attack vector has length {vector.shape[0]}, expected {d}")
