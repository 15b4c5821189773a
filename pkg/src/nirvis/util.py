"""Shared helpers: deterministic RNG construction and array checksums."""
from __future__ import annotations

import hashlib

import numpy as np


def rng_from(*keys: int) -> np.random.Generator:
    """Counter-based generator keyed by a tuple of integers.

    Philox streams derived from the same key tuple are identical across
    platforms and process/thread counts, which is what the reproducibility
    contracts of the renderer and samplers rely on.
    """
    seq = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])
    return np.random.Generator(np.random.Philox(seq))


def array_digest(*arrays: np.ndarray) -> str:
    """SHA-256 over the raw bytes of the given arrays (shape-sensitive)."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()
