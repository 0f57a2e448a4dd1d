# byzsgd/seeding.py

"""
Deterministic random streams.

Every consumer of randomness asks for a stream keyed by the master seed, a
purpose tag and integer keys (worker index, round, replicate ...). Keys are
mixed by numpy's SeedSequence entropy hash, so streams for different
(purpose, keys) are statistically independent and identical across runs,
platforms and thread counts.
"""

from typing import Dict

import numpy as np

PURPOSE_TAGS: Dict[str, int] = {
    "data": 0x64617461,
    "worker": 0x776F726B,
    "adversary": 0x61647672,
    "master": 0x6D617374,
    "probe": 0x70726F62,
    "attack_noise": 0x6E6F6973,
    "bench": 0x62656E63,
    "replicate": 0x7265706C,
}


def stream(master_seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Return the PCG64 generator for (master_seed, purpose, keys)"""
    try:
        tag = PURPOSE_TAGS[purpose]
    except KeyError:
        raise ValueError(f"Unknown stream purpose: {purpose!r}") from None
    if master_seed < 0 or any(k < 0 for k in keys):
        raise ValueError("Seeds and stream keys must be non-negative")
    entropy = [int(master_seed), tag, *(int(k) for k in keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def replicate_seed(master_seed: int, index: int) -> int:
    """
    Master seed of replicate ``index``.

    Replicate 0 runs on ``master_seed`` itself; later replicates get a
    63-bit seed hashed from (master_seed, index), so replicates of nearby
    master seeds never share streams.
    """
    if master_seed < 0 or index < 0:
        raise ValueError("Seeds and replicate indices must be non-negative")
    if index == 0:
        return master_seed
    entropy = [int(master_seed), PURPOSE_TAGS["replicate"], int(index)]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0] >> np.uint64(1))
