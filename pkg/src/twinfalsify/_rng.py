"""Counter-based random streams.

Every draw is a pure function of ``(key, counter)``: a trajectory's stream is
identified by its key, and the i-th variate of that stream by its counter.
This makes generation independent of batch size, ordering and threading, so a
twin advanced alone in a subprocess reproduces the values it would have had in
a vectorized batch.
"""
from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1
_GOLDEN_INT = 0x9E3779B97F4A7C15
_GOLDEN = np.uint64(_GOLDEN_INT)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SALT = np.uint64(0xD1B54A32D192ED03)


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, elementwise on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_key(seed: int, *labels) -> int:
    """Hash a seed and any labels into a 64-bit key."""
    h = hashlib.blake2b(digest_size=8)
    h.update(repr((int(seed), tuple(str(x) for x in labels))).encode())
    return int.from_bytes(h.digest(), "little")


def derive_seeds(master_seed: int, ids) -> np.ndarray:
    """Keyed hash of ``(master_seed, id)`` truncated to 53 bits.

    53 bits keeps the seeds exactly representable as JSON numbers in any
    language, which matters for the external twin protocol.
    """
    ids = np.asarray(ids, dtype=np.uint64)
    master = np.uint64(int(master_seed) & _MASK64)
    base = mix64(np.array([master ^ _GOLDEN], dtype=np.uint64))[0]
    return mix64(base + (ids + np.uint64(1)) * _GOLDEN) >> np.uint64(11)


def uniforms(keys: np.ndarray, counter: int) -> np.ndarray:
    """Uniform variates in the open interval (0, 1), one per key."""
    keys = np.asarray(keys, dtype=np.uint64)
    z = mix64(mix64(keys ^ _SALT) + np.uint64(((counter + 1) * _GOLDEN_INT) & _MASK64))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0**-53)


def normals(keys: np.ndarray, counter: int) -> np.ndarray:
    # inverse-CDF transform: ndtri is evaluated elementwise without SIMD kernels,
    # so values do not depend on array length
    return ndtri(uniforms(keys, counter))
