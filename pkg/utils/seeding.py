"""
Seeding — split one root seed into independent per-module streams.
"""

import zlib

import numpy as np


def derive_seed(root_seed: int, *keys) -> int:
    """Deterministic child seed for (root_seed, keys...).

    String keys are hashed with crc32 so the mapping is stable across Python
    processes (``hash`` is salted).
    """
    spawn_key = tuple(
        zlib.crc32(str(key).encode("utf-8")) if not isinstance(key, int) else int(key)
        for key in keys
    )
    sequence = np.random.SeedSequence(entropy=int(root_seed), spawn_key=spawn_key)
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def make_rng(root_seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, *keys))
