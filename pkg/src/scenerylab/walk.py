"""Lattice walks, local times and intersection counts.

Paths are stored densely (``n x d`` int64 positions, origin implicit) and
local times sparsely.  Site order is always *packed-key order*: each site
is packed as the little-endian concatenation of its ``d`` coordinates as
32-bit two's-complement words, and sites are sorted by the unsigned
integer value of that byte string (so the last coordinate is the most
significant).
"""
from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numba as nb
import numpy as np

from . import rng

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1
# n**3 must stay below 2**63 in the int64 kernels
KERNEL_MAX_STEPS = 2**21


class LawError(ValueError):
    """Raised for step laws violating the model assumptions."""


def _bareiss_det(rows: list[list[int]]) -> int:
    a = [list(r) for r in rows]
    n = len(a)
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for i in range(k + 1, n):
                if a[i][k] != 0:
                    a[k], a[i] = a[i], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[-1][-1]


def _lattice_index(vectors: Sequence[Sequence[int]], dim: int) -> int:
    """Index of the subgroup generated by ``vectors`` in Z^dim (0 if not full rank)."""
    g = 0
    for combo in itertools.combinations(vectors, dim):
        g = math.gcd(g, abs(_bareiss_det([list(v) for v in combo])))
        if g == 1:
            return 1
    return g


@dataclass(frozen=True, eq=False)
class StepLaw:
    """Finite-support symmetric law of one increment on Z^d.

    ``support`` is an ``(k, d)`` integer array and ``probs`` the matching
    probabilities.  ``exact`` optionally carries the probabilities as
    :class:`fractions.Fraction` for the enumeration oracle.
    """

    support: np.ndarray
    probs: np.ndarray
    name: str = "custom"
    exact: tuple[Fraction, ...] | None = None

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if support.ndim != 2 or support.shape[0] != probs.shape[0]:
            raise LawError("support must be (k, d) with one probability per vector")
        if support.shape[1] < 2:
            raise LawError("walks need dimension d >= 2")
        if np.any(probs <= 0):
            raise LawError("support probabilities must be positive")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise LawError(f"probabilities sum to {probs.sum()!r}, not 1")
        if len({tuple(v) for v in support.tolist()}) != len(support):
            raise LawError("duplicate support vectors")
        index = {tuple(v): p for v, p in zip(support.tolist(), probs.tolist())}
        for v, p in index.items():
            q = index.get(tuple(-x for x in v))
            if q is None or abs(p - q) > 1e-15:
                raise LawError(f"law is not symmetric at {v}")
        support.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        if np.linalg.det(self.covariance) <= 0:
            raise LawError("covariance matrix is degenerate")

    @classmethod
    def from_items(cls, items: Iterable[tuple[Sequence[int], Fraction | float]], name: str = "custom",
                   require_aperiodic: bool = False) -> "StepLaw":
        items = list(items)
        exact = None
        if all(isinstance(p, (Fraction, int)) for _, p in items):
            exact = tuple(Fraction(p) for _, p in items)
            if sum(exact) != 1:
                raise LawError("exact probabilities must sum to 1")
        law = cls(np.array([v for v, _ in items]), np.array([float(p) for _, p in items]), name, exact)
        if require_aperiodic and not law.aperiodic:
            raise LawError(f"{name} is periodic (period {law.period})")
        return law

    @classmethod
    def simple(cls, d: int) -> "StepLaw":
        """Nearest-neighbour walk, probability 1/(2d) per neighbour (period 2)."""
        items = []
        for i in range(d):
            for s in (1, -1):
                v = [0] * d
                v[i] = s
                items.append((v, Fraction(1, 2 * d)))
        return cls.from_items(items, name="simple")

    @classmethod
    def lazy(cls, d: int) -> "StepLaw":
        """Holds with probability 1/2, otherwise a simple-walk step."""
        items = [([0] * d, Fraction(1, 2))]
        items += [(v, p / 2) for v, p in zip(cls.simple(d).support.tolist(), [Fraction(1, 2 * d)] * (2 * d))]
        return cls.from_items(items, name="lazy")

    @classmethod
    def named(cls, name: str, d: int) -> "StepLaw":
        try:
            return {"simple": cls.simple, "lazy": cls.lazy}[name](d)
        except KeyError:
            raise LawError(f"unknown step law {name!r}") from None

    @property
    def d(self) -> int:
        return int(self.support.shape[1])

    @cached_property
    def covariance(self) -> np.ndarray:
        x = self.support.astype(np.float64)
        return (x * self.probs[:, None]).T @ x

    @cached_property
    def det_cov(self) -> float:
        return float(np.linalg.det(self.covariance))

    @property
    def radius(self) -> int:
        return int(np.abs(self.support).max())

    @cached_property
    def irreducible(self) -> bool:
        return _lattice_index(self.support.tolist(), self.d) == 1

    @cached_property
    def period(self) -> int:
        """gcd of possible return times (1 or 2 for symmetric laws)."""
        lifted = [list(v) + [1] for v in self.support.tolist()]
        return _lattice_index(lifted, self.d + 1) if self.irreducible else 0

    @property
    def aperiodic(self) -> bool:
        return self.irreducible and self.period == 1

    @cached_property
    def axial(self) -> np.ndarray | None:
        """``[p0, p1, ..., pd]`` if the support is {0, +-e_i}, else None."""
        d = self.d
        out = np.zeros(d + 1)
        for v, p in zip(self.support.tolist(), self.probs.tolist()):
            nz = [i for i, x in enumerate(v) if x != 0]
            if not nz:
                out[0] = p
            elif len(nz) == 1 and abs(v[nz[0]]) == 1:
                out[1 + nz[0]] = p
            else:
                return None
        return out if np.all(out[1:] > 0) else None

    @cached_property
    def digest(self) -> str:
        order = np.lexsort(self.support.T[::-1])
        h = hashlib.sha256()
        h.update(str(self.d).encode())
        for i in order:
            h.update(",".join(map(str, self.support[i])).encode())
            h.update(float(self.probs[i]).hex().encode())
        return h.hexdigest()[:16]

    @cached_property
    def thresholds(self) -> np.ndarray:
        """Cumulative probabilities scaled to 2**32 for the sampling kernel."""
        cum = np.round(np.cumsum(self.probs) * 2.0**32).astype(np.uint64)
        cum[-1] = np.uint64(2**32)
        return cum

    def __repr__(self) -> str:
        return f"StepLaw({self.name}, d={self.d}, |support|={len(self.probs)})"


@dataclass(frozen=True)
class Stream:
    """Deterministic random stream ``(seed, replica)``."""

    seed: int
    replica: int = 0


# ---------------------------------------------------------------- kernels
#
# Each Philox block yields eight 32-bit uniforms; step j is chosen as the
# number of cumulative thresholds <= u (branch-free).  Every kernel consumes
# the stream identically, so a replica's path does not depend on which
# kernel walks it.


@nb.njit(cache=True, inline="always")
def _half_word(w0, w1, w2, w3, i):
    w = w0 if i < 2 else (w1 if i < 4 else (w2 if i < 6 else w3))
    return (w >> np.uint64(32 * (i & 1))) & rng.MASK32


@nb.njit(cache=True, inline="always")
def _pick(u, thr):
    j = 0
    for q in range(thr.shape[0] - 1):
        j += u >= thr[q]
    return j


@nb.njit(cache=True)
def _fill_positions(steps, thr, k0, k1, n, out):
    d = steps.shape[1]
    pos = np.zeros(d, dtype=np.int64)
    block = np.uint64(0)
    t = 0
    while t < n:
        block += np.uint64(1)
        w0, w1, w2, w3 = rng.philox_block(block, np.uint64(0), np.uint64(0), np.uint64(0), k0, k1)
        m = min(8, n - t)
        for i in range(m):
            j = _pick(_half_word(w0, w1, w2, w3, i), thr)
            for c in range(d):
                pos[c] += steps[j, c]
                out[t + i, c] = pos[c]
        t += m


@nb.njit(cache=True)
def _fill_packed(deltas, thr, k0, k1, n, out):
    pos = np.int64(0)
    block = np.uint64(0)
    t = 0
    while t < n:
        block += np.uint64(1)
        w0, w1, w2, w3 = rng.philox_block(block, np.uint64(0), np.uint64(0), np.uint64(0), k0, k1)
        m = min(8, n - t)
        for i in range(m):
            pos += deltas[_pick(_half_word(w0, w1, w2, w3, i), thr)]
            out[t + i] = pos
        t += m


def packing_bits(law: "StepLaw", n: int) -> int:
    """Bits per coordinate for packing positions of an ``n``-step walk into one int64.

    Returns 0 when ``d * bits`` would exceed 62.
    """
    bits = int(2 * n * law.radius + 1).bit_length() + 1
    return bits if bits * law.d <= 62 else 0


def packed_deltas(law: "StepLaw", bits: int) -> np.ndarray:
    weights = np.array([1 << (bits * c) for c in range(law.d)], dtype=np.int64)
    return law.support @ weights


@nb.njit(cache=True, inline="always")
def _mix(key, mask):
    h = np.uint64(key) * np.uint64(0x9E3779B97F4A7C15)
    h ^= h >> np.uint64(31)
    return np.int64(h & mask)


@nb.njit(cache=True)
def _count_packed(keys, start, stop):
    """Occupancy counts of ``keys[start:stop]`` by open addressing.

    Returns first-visit indices and counts, in first-visit order.
    """
    m = stop - start
    cap = 16
    while cap < 2 * m:
        cap *= 2
    mask = np.uint64(cap - 1)
    slot_key = np.empty(cap, dtype=np.int64)
    slot_id = np.full(cap, -1, dtype=np.int64)
    first = np.empty(m, dtype=np.int64)
    counts = np.zeros(m, dtype=np.int64)
    used = 0
    for t in range(start, stop):
        key = keys[t]
        s = _mix(key, mask)
        while True:
            sid = slot_id[s]
            if sid < 0:
                slot_key[s] = key
                slot_id[s] = used
                first[used] = t
                counts[used] = 1
                used += 1
                break
            if slot_key[s] == key:
                counts[sid] += 1
                break
            s = (s + 1) & (cap - 1)
    return first[:used], counts[:used]


@nb.njit(cache=True, inline="always")
def _hash_site(pos, t, d, mask):
    h = np.uint64(0x9E3779B97F4A7C15)
    for c in range(d):
        h ^= np.uint64(pos[t, c] & 0xFFFFFFFF) + np.uint64(0x632BE59BD9B4E019) * np.uint64(c + 1)
        h *= np.uint64(0xBF58476D1CE4E5B9)
        h ^= h >> np.uint64(29)
    return np.int64(h & mask)


@nb.njit(cache=True)
def _count_sites(pos, start, stop):
    """Coordinate-keyed variant of :func:`_count_packed` for rows of ``pos``."""
    d = pos.shape[1]
    m = stop - start
    cap = 16
    while cap < 2 * m:
        cap *= 2
    mask = np.uint64(cap - 1)
    slot_row = np.full(cap, -1, dtype=np.int64)
    slot_id = np.empty(cap, dtype=np.int64)
    first = np.empty(m, dtype=np.int64)
    counts = np.zeros(m, dtype=np.int64)
    used = 0
    for t in range(start, stop):
        s = _hash_site(pos, t, d, mask)
        while True:
            r = slot_row[s]
            if r < 0:
                slot_row[s] = t
                slot_id[s] = used
                first[used] = t
                counts[used] = 1
                used += 1
                break
            same = True
            for c in range(d):
                if pos[r, c] != pos[t, c]:
                    same = False
                    break
            if same:
                counts[slot_id[s]] += 1
                break
            s = (s + 1) & (cap - 1)
    return first[:used], counts[:used]


@nb.njit(cache=True)
def _power_sums(counts):
    s2 = 0
    s3 = 0
    mx = 0
    for c in counts:
        s2 += c * c
        s3 += c * c * c
        if c > mx:
            mx = c
    return s2, s3, mx


@nb.njit(cache=True, parallel=True)
def _ell_stats_packed(deltas, thr, seed, r0, r1, n):
    R = r1 - r0
    out = np.empty((R, 3), dtype=np.int64)
    k0 = np.uint64(seed)
    for i in nb.prange(R):
        buf = np.empty(n, dtype=np.int64)
        _fill_packed(deltas, thr, k0, np.uint64(r0 + i), n, buf)
        first, counts = _count_packed(buf, 0, n)
        s2, s3, mx = _power_sums(counts)
        out[i, 0] = s2
        out[i, 1] = s3
        out[i, 2] = mx
    return out


@nb.njit(cache=True, parallel=True)
def _ell_stats_coords(steps, thr, seed, r0, r1, n):
    R = r1 - r0
    out = np.empty((R, 3), dtype=np.int64)
    k0 = np.uint64(seed)
    for i in nb.prange(R):
        buf = np.empty((n, steps.shape[1]), dtype=np.int64)
        _fill_positions(steps, thr, k0, np.uint64(r0 + i), n, buf)
        first, counts = _count_sites(buf, 0, n)
        s2, s3, mx = _power_sums(counts)
        out[i, 0] = s2
        out[i, 1] = s3
        out[i, 2] = mx
    return out


def ell_stats_batch(law: "StepLaw", n: int, seed: int, r0: int, r1: int) -> np.ndarray:
    """``(ell2, ell3, ellinf)`` rows for replicas ``r0..r1-1`` of stream ``seed``."""
    if n > KERNEL_MAX_STEPS:
        raise OverflowError(f"n = {n} would overflow the int64 power sums")
    bits = packing_bits(law, n)
    if bits:
        return _ell_stats_packed(packed_deltas(law, bits), law.thresholds, seed, r0, r1, n)
    return _ell_stats_coords(law.support, law.thresholds, seed, r0, r1, n)


@nb.njit(cache=True, parallel=True)
def _origin_packed(deltas, thr, seed, r0, r1, n):
    R = r1 - r0
    out = np.zeros((R, 2), dtype=np.int64)
    k0 = np.uint64(seed)
    for i in nb.prange(R):
        k1 = np.uint64(r0 + i)
        pos = np.int64(0)
        block = np.uint64(0)
        t = 0
        visits = 0
        first = 0
        while t < n:
            block += np.uint64(1)
            w0, w1, w2, w3 = rng.philox_block(block, np.uint64(0), np.uint64(0), np.uint64(0), k0, k1)
            m = min(8, n - t)
            for q in range(m):
                pos += deltas[_pick(_half_word(w0, w1, w2, w3, q), thr)]
                if pos == 0:
                    visits += 1
                    if first == 0:
                        first = t + q + 1
            t += m
        out[i, 0] = visits
        out[i, 1] = first
    return out


def origin_batch(law: "StepLaw", n: int, seed: int, r0: int, r1: int) -> np.ndarray:
    """``(ell_n(0), T_0)`` rows for replicas ``r0..r1-1``; ``T_0 = 0`` means no return by ``n``."""
    bits = packing_bits(law, n)
    if not bits:
        raise OverflowError("walk too long to pack positions into 64 bits")
    return _origin_packed(packed_deltas(law, bits), law.thresholds, seed, r0, r1, n)


# ---------------------------------------------------------------- types


@dataclass(frozen=True, eq=False)
class WalkPath:
    """Positions ``S_1..S_n``; ``S_0`` is the origin and not stored."""

    law: StepLaw
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64)
        if pos.ndim != 2 or pos.shape[1] != self.law.d or pos.shape[0] < 1:
            raise ValueError("positions must be an (n, d) array with n >= 1")
        if np.abs(pos).max() > INT32_MAX:
            raise OverflowError("coordinates exceed the 32-bit packing range")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return int(self.positions.shape[0])

    def with_origin(self) -> np.ndarray:
        """``S_0..S_n`` as an ``(n + 1, d)`` array."""
        return np.vstack([np.zeros((1, self.law.d), dtype=np.int64), self.positions])

    def increments(self) -> np.ndarray:
        return np.diff(self.with_origin(), axis=0)

    def validate(self) -> None:
        allowed = {tuple(v) for v in self.law.support.tolist()}
        for step in map(tuple, self.increments().tolist()):
            if step not in allowed:
                raise ValueError(f"increment {step} outside the law's support")

    @classmethod
    def from_steps(cls, law: StepLaw, steps: Sequence[Sequence[int]]) -> "WalkPath":
        path = cls(law, np.cumsum(np.asarray(steps, dtype=np.int64), axis=0))
        path.validate()
        return path

    def prefix(self, m: int) -> "WalkPath":
        return WalkPath(self.law, self.positions[:m])


def packed_order(sites: np.ndarray) -> np.ndarray:
    """Permutation sorting ``sites`` into packed-key order."""
    u = (np.asarray(sites, dtype=np.int64) & 0xFFFFFFFF).astype(np.uint64)
    return np.lexsort(tuple(u[:, c] for c in range(u.shape[1])))


def packed_key(site: Sequence[int]) -> bytes:
    return b"".join(int(c).to_bytes(4, "little", signed=True) for c in site)


@dataclass(frozen=True, eq=False)
class LocalTimeField:
    """Sparse local times ``site -> visits`` in packed-key order."""

    sites: np.ndarray
    counts: np.ndarray
    n: int

    def __post_init__(self):
        if int(np.sum(self.counts)) != self.n:
            raise ValueError("local times must sum to n")
        self.sites.setflags(write=False)
        self.counts.setflags(write=False)

    @classmethod
    def from_counts(cls, mapping: dict[tuple[int, ...], int]) -> "LocalTimeField":
        sites = np.array(list(mapping.keys()), dtype=np.int64)
        counts = np.array(list(mapping.values()), dtype=np.int64)
        order = packed_order(sites)
        return cls(sites[order], counts[order], int(counts.sum()))

    @cached_property
    def ell2(self) -> int:
        return q_fold(self, 2)

    @cached_property
    def ell3(self) -> int:
        return q_fold(self, 3)

    @cached_property
    def ell_inf(self) -> int:
        return int(self.counts.max())

    @property
    def n_sites(self) -> int:
        return int(self.counts.shape[0])

    def as_dict(self) -> dict[tuple[int, ...], int]:
        return {tuple(s): int(c) for s, c in zip(self.sites.tolist(), self.counts.tolist())}

    def __getitem__(self, site) -> int:
        return self.as_dict().get(tuple(site), 0)


# ---------------------------------------------------------------- operations


def sample_path(law: StepLaw, n: int, stream: Stream) -> WalkPath:
    """Draw ``n`` i.i.d. increments from ``law`` on stream ``(seed, replica)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    buf = np.empty((n, law.d), dtype=np.int64)
    k0, k1 = rng.key_words(stream.seed, stream.replica)
    _fill_positions(law.support, law.thresholds, k0, k1, n, buf)
    return WalkPath(law, buf)


def _field_from_rows(pos: np.ndarray, start: int, stop: int) -> LocalTimeField:
    first, counts = _count_sites(pos, start, stop)
    sites = pos[first]
    order = packed_order(sites)
    return LocalTimeField(sites[order].copy(), counts[order].copy(), stop - start)


def accumulate(path: WalkPath) -> LocalTimeField:
    """Local times ``#{1 <= k <= n : S_k = z}``."""
    return _field_from_rows(path.positions, 0, path.n)


def q_fold(field: LocalTimeField, q: int) -> int:
    """``sum_z ell(z)**q`` in exact integer arithmetic."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if q == 1:
        return field.n
    return sum(c**q for c in field.counts.tolist())


def _local_times(rows: np.ndarray) -> dict[tuple[int, ...], int]:
    out: dict[tuple[int, ...], int] = {}
    for row in map(tuple, rows.tolist()):
        out[row] = out.get(row, 0) + 1
    return out


def _check_pair(a: WalkPath, b: WalkPath) -> None:
    if a.n != b.n:
        raise ValueError(f"path lengths differ ({a.n} vs {b.n})")
    if a.law.d != b.law.d:
        raise ValueError("paths live in different dimensions")


def pair_intersections(path_a: WalkPath, path_b: WalkPath) -> int:
    """``sum_{i=1..n} sum_{j=0..n-1} 1{S_i = S'_j}``."""
    _check_pair(path_a, path_b)
    la = _local_times(path_a.positions)
    lb = _local_times(path_b.with_origin()[:-1])
    return sum(c * lb.get(z, 0) for z, c in la.items())


def triple_intersections(path_a: WalkPath, path_b: WalkPath) -> tuple[int, int]:
    """``(Lambda, Lambda*)``.

    ``Lambda``: i in 1..n on ``path_a``, j, k in 0..n-1 on ``path_b``.
    ``Lambda*``: i in 0..n-1 on ``path_a``, j, k in 1..n on ``path_b``.
    """
    _check_pair(path_a, path_b)
    a_late = _local_times(path_a.positions)
    a_early = _local_times(path_a.with_origin()[:-1])
    b_late = _local_times(path_b.positions)
    b_early = _local_times(path_b.with_origin()[:-1])
    lam = sum(c * b_early.get(z, 0) ** 2 for z, c in a_late.items())
    lam_star = sum(c * b_late.get(z, 0) ** 2 for z, c in a_early.items())
    return lam, lam_star


@dataclass(frozen=True)
class DyadicTerms:
    """Block intersection counts of a path of length ``2**N``.

    ``raw[j-1][k-1]`` is the number of coincidences ``S_l = S_m`` with ``l``
    in the left half and ``m`` in the right half of block ``k`` at level
    ``j``; ``centred`` subtracts the expected count.
    """

    N: int
    raw: list[np.ndarray]
    centred: list[np.ndarray]

    def total(self) -> float:
        return float(sum(c.sum() for c in self.centred))


def _gap_weights(block: int) -> np.ndarray:
    """Number of pairs (l, m) across two adjacent blocks of size ``block`` with gap m - l."""
    gaps = np.arange(2 * block)
    w = np.minimum(gaps, 2 * block - gaps)
    w[0] = 0
    return w


def dyadic_terms(path: WalkPath, return_probs: Sequence[float]) -> DyadicTerms:
    """Centred cross-block intersection counts of the dyadic decomposition."""
    n = path.n
    N = n.bit_length() - 1
    if n != 1 << N or N < 1:
        raise ValueError(f"path length {n} is not a power of two >= 2")
    p0 = np.asarray(return_probs, dtype=np.float64)
    if p0.shape[0] < n:
        raise ValueError(f"need return probabilities up to k = {n - 1}")
    pos = np.ascontiguousarray(path.positions)
    raw, centred = [], []
    for j in range(1, N + 1):
        size = 1 << (N - j)
        expected = float(_gap_weights(size) @ p0[: 2 * size])
        counts = np.empty(1 << (j - 1), dtype=np.int64)
        for k in range(1, (1 << (j - 1)) + 1):
            lo = (2 * k - 2) * size
            left = _local_times(pos[lo : lo + size])
            right = _local_times(pos[lo + size : lo + 2 * size])
            counts[k - 1] = sum(c * right.get(z, 0) for z, c in left.items())
        raw.append(counts)
        centred.append(counts - expected)
    return DyadicTerms(N, raw, centred)
