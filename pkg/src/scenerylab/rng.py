"""Counter-based random streams.

All randomness in the package comes from Philox4x64-10 keyed by
``(seed, replica)``.  The block function below is bit-compatible with
:class:`numpy.random.Philox`, so a stream can be consumed either inside a
numba kernel or through a regular :class:`numpy.random.Generator`.

Counter layout (four 64-bit words ``c0..c3``):

* walk increments: ``c0`` = block index starting at 1, ``c1 = c2 = c3 = 0``.
  This is exactly the sequence ``Philox(key=seed + (replica << 64))``
  produces from a fresh state.
* scenery values: ``c0..c2`` hold the packed site coordinates and ``c3``
  carries :data:`SITE_TAG`.
* tilted draws: ``c3`` carries :data:`TILT_TAG`; numpy advances ``c0``.
"""
from __future__ import annotations

import numba as nb
import numpy as np

MASK64 = (1 << 64) - 1
MASK32 = np.uint64(0xFFFFFFFF)

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)

SITE_TAG = 1 << 32
TILT_TAG = 2 << 32
MAX_SITE_DIM = 6


@nb.njit(cache=True, inline="always")
def _mulhilo(a, b):
    a_lo = a & MASK32
    a_hi = a >> np.uint64(32)
    b_lo = b & MASK32
    b_hi = b >> np.uint64(32)
    lo_lo = a_lo * b_lo
    hi_lo = a_hi * b_lo
    lo_hi = a_lo * b_hi
    hi_hi = a_hi * b_hi
    cross = (lo_lo >> np.uint64(32)) + (hi_lo & MASK32) + lo_hi
    hi = hi_hi + (hi_lo >> np.uint64(32)) + (cross >> np.uint64(32))
    lo = (cross << np.uint64(32)) | (lo_lo & MASK32)
    return hi, lo


@nb.njit(cache=True)
def philox_block(c0, c1, c2, c3, k0, k1):
    """One Philox4x64-10 block for counter ``(c0..c3)`` and key ``(k0, k1)``."""
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def u64_to_unit(x):
    """Map a 64-bit word to a double in [0, 1) using the top 53 bits."""
    return float(x >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True)
def site_counter(coords):
    """Pack up to six int32 coordinates into counter words ``c0..c2``."""
    words = np.zeros(3, dtype=np.uint64)
    for i in range(coords.shape[0]):
        u = np.uint64(np.int64(coords[i]) & np.int64(0xFFFFFFFF))
        if i % 2 == 1:
            u = u << np.uint64(32)
        words[i // 2] |= u
    return words[0], words[1], words[2]


def stream_key(seed: int, replica: int = 0) -> int:
    """128-bit Philox key for stream ``(seed, replica)``."""
    return (int(seed) & MASK64) | ((int(replica) & MASK64) << 64)


def key_words(seed: int, replica: int = 0) -> tuple[np.uint64, np.uint64]:
    return np.uint64(int(seed) & MASK64), np.uint64(int(replica) & MASK64)


def generator(seed: int, replica: int = 0, tag: int = 0) -> np.random.Generator:
    """numpy Generator over stream ``(seed, replica)`` in the counter space ``tag``."""
    bitgen = np.random.Philox(key=stream_key(seed, replica), counter=[0, 0, 0, tag])
    return np.random.Generator(bitgen)


def raw_block(seed: int, replica: int, counter: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
    """Python-level access to one block; used by tests and scalar helpers."""
    k0, k1 = key_words(seed, replica)
    out = philox_block(*(np.uint64(c & MASK64) for c in counter), k0, k1)
    return tuple(int(v) for v in out)
