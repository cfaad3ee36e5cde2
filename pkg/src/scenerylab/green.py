"""Return probabilities, Green's function sums and expected self-intersections.

Two exact engines fill ``P{S_k = 0}``:

* ``dense``: repeated stencil application on a dense box.  Only the
  distributions up to ``ceil(K/2)`` steps are built; by symmetry
  ``P{S_{a+b} = 0} = sum_z P{S_a = z} P{S_b = z}``.
* ``axial``: for laws supported on ``{0, +-e_i}`` the walk is a random
  interleaving of independent one-dimensional simple walks and a holding
  component, so return probabilities follow from binomial mixing of the
  one-dimensional sequences.  Cost grows like ``K**1.5`` instead of
  ``K**(d+1)``.

Entries beyond the exact horizon use the local-limit form ``c k**(-d/2)``
with ``c`` fitted on the last exact octave.
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np
from scipy import signal, special

from .walk import StepLaw

DEFAULT_MEMORY_BUDGET = 2 * 1024**3
AXIAL_MAX_EXACT = 2**17
MIN_DENSE_HORIZON = 64
TAIL_SAFETY = 1.5
CACHE_MAGIC = b"SLRP"
CACHE_VERSION = 1


class BudgetError(MemoryError):
    """Exact computation would exceed the configured memory budget."""


@dataclass(frozen=True, eq=False)
class ReturnProbTable:
    law: StepLaw
    p0: np.ndarray
    exact_horizon: int
    method: str
    tail_constant: float
    tail_constant_prev: float

    @property
    def horizon(self) -> int:
        return int(self.p0.shape[0]) - 1

    @property
    def tags(self) -> np.ndarray:
        """``'exact'`` or ``'local-limit'`` per entry."""
        out = np.full(self.p0.shape[0], "local-limit", dtype=object)
        out[: self.exact_horizon + 1] = "exact"
        return out

    def require_exact(self, k: int) -> None:
        if k > self.exact_horizon:
            raise BudgetError(f"exact return probabilities needed to k = {k}, "
                              f"have {self.exact_horizon}")


# ---------------------------------------------------------------- dense engine


def dense_horizon_limit(law: StepLaw, budget: int = DEFAULT_MEMORY_BUDGET) -> int:
    """Largest ``K`` whose dense half-horizon boxes fit into ``budget`` bytes."""
    d, r = law.d, law.radius
    # two boxes of side 2 r m + 1 plus one scratch box
    m = int(((budget / (3 * 8)) ** (1.0 / d) - 1) // (2 * r))
    return max(0, 2 * m)


def _dense_p0(law: StepLaw, K: int) -> np.ndarray:
    d, r = law.d, law.radius
    m_max = (K + 1) // 2
    R = r * m_max
    side = 2 * R + 1
    cur = np.zeros((side,) * d)
    cur[(R,) * d] = 1.0
    p0 = np.zeros(K + 1)
    p0[0] = 1.0
    prev = None
    for m in range(0, m_max + 1):
        if m > 0:
            lo, hi = R - r * m, R + r * m + 1
            nxt = np.zeros_like(cur)
            inner = tuple(slice(lo + r, hi - r) for _ in range(d))
            src = cur[inner]
            for v, p in zip(law.support.tolist(), law.probs.tolist()):
                dst = tuple(slice(lo + r + v[c], hi - r + v[c]) for c in range(d))
                nxt[dst] += p * src
            prev, cur = cur, nxt
            if 2 * m - 1 <= K:
                p0[2 * m - 1] = float(np.sum(prev * cur))
        if 2 * m <= K:
            p0[2 * m] = float(np.sum(cur * cur))
    return p0


# ---------------------------------------------------------------- axial engine


@nb.njit(cache=True)
def _binomial_mix(ra, rb, alpha, K):
    """``out[k] = sum_j Bin(k, alpha)(j) ra[j] rb[k - j]`` with windowed pmf recursion."""
    out = np.zeros(K + 1)
    la = math.log(alpha)
    lb = math.log1p(-alpha)
    ratio = alpha / (1.0 - alpha)
    for k in range(K + 1):
        mode = min(k, int((k + 1) * alpha))
        logw = math.lgamma(k + 1.0) - math.lgamma(mode + 1.0) - math.lgamma(k - mode + 1.0) \
            + mode * la + (k - mode) * lb
        w0 = math.exp(logw)
        acc = w0 * ra[mode] * rb[k - mode]
        w = w0
        j = mode
        while j < k:
            w *= (k - j) / (j + 1.0) * ratio
            j += 1
            acc += w * ra[j] * rb[k - j]
            if w < 1e-40 * w0 and j > k * alpha:
                break
        w = w0
        j = mode
        while j > 0:
            w *= j / ((k - j + 1.0) * ratio)
            j -= 1
            acc += w * ra[j] * rb[k - j]
            if w < 1e-40 * w0 and j < k * alpha:
                break
        out[k] = acc
    return out


def _one_dim_returns(K: int) -> np.ndarray:
    k = np.arange(K + 1)
    out = np.zeros(K + 1)
    even = k[::2]
    out[::2] = np.exp(special.gammaln(even + 1) - 2 * special.gammaln(even / 2 + 1) - even * math.log(2.0))
    return out


def _axial_p0(weights: np.ndarray, K: int) -> np.ndarray:
    hold, axes = float(weights[0]), 2.0 * np.asarray(weights[1:], dtype=np.float64)
    base = _one_dim_returns(K)
    acc, mass = base, float(axes[0])
    for w in axes[1:]:
        acc = _binomial_mix(acc, base, mass / (mass + w), K)
        mass += w
    if hold > 0:
        acc = _binomial_mix(acc, np.ones(K + 1), mass / (mass + hold), K)
    acc[0] = 1.0
    return acc


# ---------------------------------------------------------------- tables


def _fit_constant(p0: np.ndarray, lo: int, hi: int, d: int, period: int) -> float:
    k = np.arange(max(lo, 1), hi + 1)
    k = k[(k % period == 0) & (p0[k] > 0)]
    return float(np.exp(np.mean(np.log(p0[k]) + 0.5 * d * np.log(k))))


def tail_sum(K: int, d: int, period: int = 1) -> float:
    """``sum_{k > K, period | k} k**(-d/2)``."""
    return period ** (-0.5 * d) * float(special.zeta(0.5 * d, K // period + 1))


def return_probabilities(law: StepLaw, K: int, *, max_exact: int | None = None,
                         method: str = "auto",
                         memory_budget: int = DEFAULT_MEMORY_BUDGET) -> ReturnProbTable:
    """Table of ``P{S_k = 0}`` for ``k = 0..K``."""
    if K < 0:
        raise ValueError("horizon must be >= 0")
    if method == "auto":
        method = "axial" if law.axial is not None else "dense"
    if method == "axial":
        if law.axial is None:
            raise ValueError("axial engine needs support {0, +-e_i}")
        cap = AXIAL_MAX_EXACT if max_exact is None else max_exact
    elif method == "dense":
        cap = dense_horizon_limit(law, memory_budget)
        if cap < MIN_DENSE_HORIZON:
            raise BudgetError(f"dense engine reaches only k = {cap} within the memory budget")
        if max_exact is not None:
            cap = min(cap, max_exact)
    else:
        raise ValueError(f"unknown method {method!r}")
    K_exact = min(K, cap)
    exact = _axial_p0(law.axial, K_exact) if method == "axial" else _dense_p0(law, K_exact)
    period = max(law.period, 1)
    c = c_prev = float("nan")
    if K_exact >= 16:
        c = _fit_constant(exact, K_exact // 2, K_exact, law.d, period)
        c_prev = _fit_constant(exact, K_exact // 4, K_exact // 2, law.d, period)
    p0 = np.empty(K + 1)
    p0[: K_exact + 1] = exact
    if K > K_exact:
        if not np.isfinite(c):
            raise BudgetError("exact horizon too short to fit the local-limit tail")
        k = np.arange(K_exact + 1, K + 1)
        p0[K_exact + 1:] = np.where(k % period == 0, c * k ** (-0.5 * law.d), 0.0)
    p0.setflags(write=False)
    return ReturnProbTable(law, p0, K_exact, method, c, c_prev)


def local_limit_constant(law: StepLaw) -> float:
    """``(2 pi)^(-d/2) det(Gamma)^(-1/2)`` times the period."""
    return max(law.period, 1) * (2 * math.pi) ** (-0.5 * law.d) / math.sqrt(law.det_cov)


def _table(law: StepLaw, K: int, table: ReturnProbTable | None) -> ReturnProbTable:
    if table is not None and table.horizon >= K:
        return table
    return return_probabilities(law, K)


@dataclass(frozen=True)
class GreenEstimate:
    value: float
    error: float
    horizon: int


def green_zero(law: StepLaw, tol: float = 1e-6, *, max_exact: int | None = None) -> GreenEstimate:
    """``G(0) = sum_k P{S_k = 0}`` with a certified-by-octave-drift error bound."""
    if law.d <= 2:
        raise ValueError("G(0) is infinite for recurrent walks (d <= 2)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    cap = max_exact or (AXIAL_MAX_EXACT if law.axial is not None else dense_horizon_limit(law))
    K = min(1024, cap)
    while True:
        table = return_probabilities(law, K, max_exact=K)
        period = max(law.period, 1)
        tail = tail_sum(K, law.d, period)
        err = TAIL_SAFETY * abs(table.tail_constant - table.tail_constant_prev) * tail
        value = math.fsum(table.p0) + table.tail_constant * tail
        if err <= tol:
            return GreenEstimate(value, err, K)
        if K >= cap:
            raise BudgetError(f"G(0) error bound {err:.3g} > tol {tol:.3g} at the exact horizon {K}")
        K = min(2 * K, cap)


def expected_ell2(law: StepLaw, n: int, table: ReturnProbTable | None = None) -> float:
    """``E ell_n^(2) = n + 2 sum_{k=1}^{n-1} (n - k) P{S_k = 0}``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p0 = _table(law, n - 1, table).p0
    k = np.arange(1, n)
    return float(n + 2.0 * np.dot(n - k, p0[1:n]))


def expected_ell3(law: StepLaw, n: int, table: ReturnProbTable | None = None) -> float:
    """Exact ``E ell_n^(3)``.

    Ordered index triples split into: all equal (``n``), exactly two equal
    (``3 (ell2 - n)``) and pairwise distinct, whose expectation is
    ``6 sum_{a<b<c} p(b-a) p(c-b)`` by the Markov property.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    tbl = _table(law, n - 1, table)
    e2 = expected_ell2(law, n, tbl)
    if n < 3:
        return float(n + 3.0 * (e2 - n))
    q = tbl.p0[1:n]
    conv = np.convolve(q, q) if n <= 4096 else signal.fftconvolve(q, q)
    # conv[s - 2] = sum_{u + v = s, u, v >= 1} p(u) p(v)
    s = np.arange(2, n)
    distinct = float(np.dot(n - s, conv[: n - 2]))
    return float(n + 3.0 * (e2 - n) + 6.0 * distinct)


def estimate_K2(law: StepLaw, n: int, table: ReturnProbTable | None = None) -> float:
    """``sum_{k=1}^n P{S_k = 0} / log n`` (planar walks only)."""
    if law.d != 2:
        raise ValueError("K2 is defined for d = 2")
    if n < 16:
        raise ValueError("n must be >= 16")
    p0 = _table(law, n, table).p0
    return math.fsum(p0[1: n + 1]) / math.log(n)


def sum_Gn_squared(law: StepLaw, n: int, table: ReturnProbTable | None = None, *,
                   allow_extrapolated: bool = False) -> float:
    """``sum_z G_n(z)**2`` where ``G_n(z) = sum_{k<=n} P{S_k = z}``.

    Symmetry turns the spatial sum into ``sum_{j,k<=n} P{S_{j+k} = 0}``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    tbl = _table(law, 2 * n, table)
    if not allow_extrapolated:
        tbl.require_exact(2 * n)
    s = np.arange(2 * n + 1)
    mult = np.minimum(s, 2 * n - s) + 1
    return float(np.dot(mult, tbl.p0[: 2 * n + 1]))


# ---------------------------------------------------------------- cache


def save_table(table: ReturnProbTable, path: str | os.PathLike) -> None:
    header = json.dumps({
        "law": table.law.digest,
        "horizon": table.horizon,
        "exact_horizon": table.exact_horizon,
        "method": table.method,
        "tail_constant": float(table.tail_constant).hex(),
        "tail_constant_prev": float(table.tail_constant_prev).hex(),
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC + struct.pack("<II", CACHE_VERSION, len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(table.p0, dtype="<f8").tobytes())


def load_table(law: StepLaw, path: str | os.PathLike) -> ReturnProbTable:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CACHE_MAGIC:
        raise ValueError(f"{path} is not a return-probability cache file")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != CACHE_VERSION:
        raise ValueError(f"cache version {version} unsupported")
    meta = json.loads(blob[12: 12 + hlen])
    if meta["law"] != law.digest:
        raise ValueError("cache file belongs to a different step law")
    p0 = np.frombuffer(blob[12 + hlen:], dtype="<f8").astype(np.float64)
    p0.setflags(write=False)
    return ReturnProbTable(law, p0, meta["exact_horizon"], meta["method"],
                           float.fromhex(meta["tail_constant"]), float.fromhex(meta["tail_constant_prev"]))


def default_cache_dir() -> Path:
    return Path(os.environ.get("SCENERYLAB_CACHE", Path.home() / ".cache" / "scenerylab"))


def cached_return_probabilities(law: StepLaw, K: int, cache_dir: str | os.PathLike | None = None) -> ReturnProbTable:
    """:func:`return_probabilities` memoised on disk by ``(law digest, K)``."""
    folder = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    path = folder / f"p0-{law.digest}-{K}.bin"
    if path.exists():
        return load_table(law, path)
    table = return_probabilities(law, K)
    folder.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    save_table(table, tmp)
    os.replace(tmp, path)
    return table
