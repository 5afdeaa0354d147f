"""Deterministic seed derivation from (root seed, key, ...) tuples."""

import zlib

import numpy as np


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    if isinstance(key, float):
        # ratios such as 0.3 are keyed by their rounded per-mille value
        return int(round(key * 1000)) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(root: int, *keys) -> int:
    """Return a 31-bit seed that depends only on ``root`` and ``keys``."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF] + [_key_int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint32)[0] >> 1)


def rng_for(root: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *keys))
