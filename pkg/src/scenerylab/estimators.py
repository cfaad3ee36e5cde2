"""Monte Carlo tail estimators and the experiment-level measurements.

Every replica ``r`` of an experiment with seed ``s`` owns the stream
``(s, r)``: its walk, its scenery and its tilt draws are functions of that
pair alone, and reductions run in replica order, so results do not depend on
the number of worker threads.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy import special

from . import green
from .rates import mills_tail
from .results import EstimateResult
from .saddlepoint import (MIN_ESS, TiltSolveError, solve_tilt, tilt_state, tilted_draws)
from .scenery import SceneryLaw, site_value
from .walk import (KERNEL_MAX_STEPS, StepLaw, Stream, _count_packed, _count_sites, _fill_packed,
                   _fill_positions, accumulate, ell_stats_batch, origin_batch, packed_deltas,
                   packing_bits, sample_path)
from . import rng

RARE_EVENT_FLOOR = 1e-10
INNER_FAILURE_LIMIT = 0.01
BATCH = 4096


class RareEventError(ValueError):
    """Naive sampling cannot resolve the requested tail."""


# ---------------------------------------------------------------- kernels


@nb.njit(cache=True)
def _unpack(key, bits, d, out):
    full = np.int64(1) << np.int64(bits)
    half = full >> np.int64(1)
    for c in range(d):
        low = key & (full - 1)
        if low >= half:
            low -= full
        out[c] = low
        key = (key - low) >> np.int64(bits)


@nb.njit(cache=True, parallel=True)
def _rwrs_packed(deltas, thr, bits, d, code, param, seed, r0, r1, n):
    R = r1 - r0
    out = np.empty(R)
    k0 = np.uint64(seed)
    for i in nb.prange(R):
        k1 = np.uint64(r0 + i)
        buf = np.empty(n, dtype=np.int64)
        _fill_packed(deltas, thr, k0, k1, n, buf)
        first, counts = _count_packed(buf, 0, n)
        coords = np.empty(d, dtype=np.int64)
        x = 0.0
        for s in range(first.shape[0]):
            _unpack(buf[first[s]], bits, d, coords)
            x += counts[s] * site_value(code, param, k0, k1, coords)
        out[i] = x
    return out


@nb.njit(cache=True, parallel=True)
def _rwrs_coords(steps, thr, code, param, seed, r0, r1, n):
    R = r1 - r0
    out = np.empty(R)
    k0 = np.uint64(seed)
    for i in nb.prange(R):
        k1 = np.uint64(r0 + i)
        buf = np.empty((n, steps.shape[1]), dtype=np.int64)
        _fill_positions(steps, thr, k0, k1, n, buf)
        first, counts = _count_sites(buf, 0, n)
        x = 0.0
        for s in range(first.shape[0]):
            x += counts[s] * site_value(code, param, k0, k1, buf[first[s]])
        out[i] = x
    return out


def rwrs_batch(law: StepLaw, scenery: SceneryLaw, n: int, seed: int, r0: int, r1: int) -> np.ndarray:
    """``X_n`` for replicas ``r0..r1-1``; per-replica sums run in first-visit order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    bits = packing_bits(law, n)
    if bits:
        return _rwrs_packed(packed_deltas(law, bits), law.thresholds, bits, law.d, scenery.code,
                            float(scenery.param), seed, r0, r1, n)
    return _rwrs_coords(law.support, law.thresholds, scenery.code, float(scenery.param), seed, r0, r1, n)


def set_workers(workers: int | None) -> None:
    """Thread count for the replica kernels (results do not depend on it)."""
    if workers is not None:
        nb.set_num_threads(max(1, min(int(workers), nb.config.NUMBA_NUM_THREADS)))


def _batched(fn, replicas: int) -> np.ndarray:
    return np.concatenate([fn(s, min(replicas, s + BATCH * 16)) for s in range(0, replicas, BATCH * 16)])


# ---------------------------------------------------------------- tail estimators


def predicted_tail(law: StepLaw, scenery: SceneryLaw, n: int, b: float) -> float:
    """Gaussian prediction ``1 - Phi(b / sqrt(sigma^2 E ell^(2)))`` used by the rare-event guard."""
    e2 = green.expected_ell2(law, n)
    return mills_tail(b / math.sqrt(scenery.variance * e2))


def naive_mc(law: StepLaw, scenery: SceneryLaw, n: int, b: float, replicas: int, seed: int,
             *, guard: bool = True) -> EstimateResult:
    """Fraction of replicas with ``X_n >= b``; binomial standard error."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    if guard and b > 0:
        p = predicted_tail(law, scenery, n, b)
        if p < RARE_EVENT_FLOOR / replicas:
            raise RareEventError(f"predicted tail {p:.3g} is below {RARE_EVENT_FLOOR:g}/replicas; "
                                 "use the conditional-IS estimator")
    t0 = time.perf_counter()
    x = _batched(lambda a, z: rwrs_batch(law, scenery, n, seed, a, z), replicas)
    hits = int(np.count_nonzero(x >= b))
    p = hits / replicas
    se = math.sqrt(p * (1 - p) / replicas)
    return EstimateResult(p, se, replicas, "naive", seed, time.perf_counter() - t0, (), {"hits": hits})


def _inner_is(field, scenery: SceneryLaw, b: float, inner: int, seed: int, replica: int) -> tuple[float, bool]:
    """One walk's conditional tail by tilted IS; falls back to untilted draws when the tilt fails."""
    if b > field.n * scenery.max_abs:
        return 0.0, False
    failed = False
    try:
        st = solve_tilt(field, scenery, b) if b > 0 else tilt_state(field, scenery, 0.0)
    except TiltSolveError:
        st = tilt_state(field, scenery, 0.0)
        failed = True
    gen = rng.generator(seed, replica, rng.TILT_TAG)
    logw, T = tilted_draws(st, inner, gen)
    vals = np.where(T >= b, np.exp(logw), 0.0)
    sq = float(np.sum(vals * vals))
    ess = float(np.sum(vals) ** 2 / sq) if sq > 0 else 0.0
    if st.h > 0 and ess < MIN_ESS:
        failed = True
    return min(1.0, float(np.mean(vals))), failed


def conditional_mc(law: StepLaw, scenery: SceneryLaw, n: int, b: float, walk_replicas: int,
                   inner_replicas: int, seed: int, *, inner: str = "auto") -> EstimateResult:
    """Average over walks of ``P{X_n >= b | walk}``.

    The inner value is exact for gaussian scenery and a tilted importance
    sampling estimate otherwise; ``inner="is"`` forces the latter.
    """
    if walk_replicas < 2:
        raise ValueError("need at least two walks")
    if inner not in ("auto", "exact", "is"):
        raise ValueError("inner must be auto, exact or is")
    if inner == "exact" and scenery.variant != "gaussian":
        raise ValueError("exact inner values need gaussian scenery")
    t0 = time.perf_counter()
    fails = 0
    if scenery.variant == "gaussian" and inner != "is":
        if n > KERNEL_MAX_STEPS:
            raise OverflowError("n too large for the local-time kernel")
        ell2 = _batched(lambda a, z: ell_stats_batch(law, n, seed, a, z)[:, 0], walk_replicas)
        vals = special.ndtr(-b / np.sqrt(scenery.variance * ell2.astype(np.float64)))
        tag = "conditional-exact"
    else:
        if inner_replicas < 100:
            raise ValueError("inner_replicas must be >= 100")
        vals = np.empty(walk_replicas)
        for r in range(walk_replicas):
            f = accumulate(sample_path(law, n, Stream(seed, r)))
            vals[r], bad = _inner_is(f, scenery, b, inner_replicas, seed, r)
            fails += bad
        tag = "conditional-IS"
    p = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(walk_replicas))
    flags = ("inner-failures",) if fails > INNER_FAILURE_LIMIT * walk_replicas else ()
    return EstimateResult(min(p, 1.0), se, walk_replicas, tag, seed, time.perf_counter() - t0, flags,
                          {"inner_failures": fails, "inner_replicas": inner_replicas})


# ---------------------------------------------------------------- rate fits


REGRESSORS = {
    "T2": lambda n, b: b * b / n,
    "T3a": lambda n, b: b * b / (n * math.log(n)),
    "T3b": lambda n, b: b / math.sqrt(n),
}


@dataclass(frozen=True)
class RateFit:
    model: str
    slope: float
    intercept: float
    slope_stderr: float
    r2: float
    residuals: np.ndarray = field(repr=False)


def empirical_rate(results, model: str = "T2", *, intercept: bool = True) -> RateFit:
    """Least-squares fit of ``log p`` on the rate regressor of ``model``.

    ``results`` is an iterable of ``(n, b, log_p)``.  With ``intercept`` the
    fit absorbs the slowly varying prefactor of the tail.
    """
    if model not in REGRESSORS:
        raise ValueError(f"model must be one of {', '.join(REGRESSORS)}")
    rows = [(float(n), float(b), float(lp)) for n, b, lp in results]
    if any(not math.isfinite(lp) for _, _, lp in rows):
        raise ValueError("log p must be finite (zero estimates cannot be fitted)")
    x = np.array([REGRESSORS[model](n, b) for n, b, _ in rows])
    y = np.array([lp for _, _, lp in rows])
    k = 2 if intercept else 1
    if len(rows) < k:
        raise ValueError(f"need at least {k} points")
    X = np.column_stack([x, np.ones_like(x)]) if intercept else x[:, None]
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    fitted = X @ coef
    res = y - fitted
    ss_res = float(res @ res)
    centre = y - y.mean() if intercept else y
    ss_tot = float(centre @ centre)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = len(rows) - k
    if dof > 0:
        cov = ss_res / dof * np.linalg.inv(X.T @ X)
        se = float(math.sqrt(max(cov[0, 0], 0.0)))
    else:
        se = math.nan
    return RateFit(model, float(coef[0]), float(coef[1]) if intercept else 0.0, se, r2, res)


# ---------------------------------------------------------------- concentration


@dataclass(frozen=True)
class ConcentrationTable:
    n: int
    d: int
    mean: float
    replicas: int
    x: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    two_sided: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray

    def diagnostics(self) -> dict[str, np.ndarray]:
        ln = math.log(self.n)
        return {"sqrt_x_over_log": np.sqrt(self.x) / ln,
                "sqrt_x_over_log15": np.sqrt(self.x) / ln**1.5,
                "x23_over_n13": self.x ** (2 / 3) / self.n ** (1 / 3)}

    def shape_fit(self, column: str | None = None, min_count: int = 5) -> tuple[float, float, int]:
        """Slope and ``R^2`` of ``log P(two-sided)`` on a shape column over rows with ``>= min_count`` events."""
        if column is None:
            column = {3: "x23_over_n13", 4: "sqrt_x_over_log15"}.get(self.d, "sqrt_x_over_log")
        u = self.diagnostics()[column]
        keep = (self.counts >= min_count) & (self.x > 0)
        if keep.sum() < 3:
            raise ValueError("fewer than three visible points")
        X = np.column_stack([u[keep], np.ones(int(keep.sum()))])
        y = np.log(self.two_sided[keep])
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        res = y - X @ coef
        r2 = 1 - float(res @ res) / float(((y - y.mean()) ** 2).sum())
        return float(coef[0]), r2, int(keep.sum())


def ell_samples(law: StepLaw, n: int, replicas: int, seed: int) -> np.ndarray:
    """``(ell2, ell3, ellinf)`` rows for ``replicas`` walks."""
    return _batched(lambda a, z: ell_stats_batch(law, n, seed, a, z), replicas)


def ell2_concentration(law: StepLaw, n: int, x_grid, replicas: int, seed: int) -> ConcentrationTable:
    """Empirical tails of ``ell^(2) - E ell^(2)`` (both sides and their union)."""
    x = np.asarray(x_grid, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("x grid must be nonnegative")
    mean = green.expected_ell2(law, n)
    dev = ell_samples(law, n, replicas, seed)[:, 0].astype(np.float64) - mean
    dev.sort()
    neg = np.sort(-dev)
    up = (replicas - np.searchsorted(dev, x, side="left")) / replicas
    lo = (replicas - np.searchsorted(neg, x, side="left")) / replicas
    absdev = np.sort(np.abs(dev))
    cnt = replicas - np.searchsorted(absdev, x, side="left")
    two = cnt / replicas
    se = np.sqrt(two * (1 - two) / replicas)
    return ConcentrationTable(n, law.d, mean, replicas, x, up, lo, two, se, cnt)


# ---------------------------------------------------------------- maximal local time


@dataclass(frozen=True)
class MaxTailTable:
    n: int
    replicas: int
    k: np.ndarray
    p: np.ndarray
    stderr: np.ndarray
    q_hat: float
    q_stderr: float
    dominated: np.ndarray
    slope: float
    slope_k: np.ndarray = field(repr=False, default=None)

    @property
    def all_dominated(self) -> bool:
        return bool(np.all(self.dominated))


def max_local_time_tail(law: StepLaw, n: int, k_grid, replicas: int, seed: int) -> MaxTailTable:
    """``P{ell_n(0) >= k}`` against the geometric bound ``q^k``, ``q = P{T_0 <= n}``.

    Both estimates come from the same walks.  Domination is checked as
    ``p_k <= q^k + 5 sigma`` with ``sigma`` the combined standard error of
    ``p_k`` and ``q^k`` (delta method).
    """
    k = np.asarray(k_grid, dtype=np.int64)
    if np.any(k < 1):
        raise ValueError("k must be >= 1")
    rows = _batched(lambda a, z: origin_batch(law, n, seed, a, z), replicas)
    visits = np.sort(rows[:, 0])
    q = float(np.count_nonzero(rows[:, 1] > 0)) / replicas
    q_se = math.sqrt(q * (1 - q) / replicas)
    p = (replicas - np.searchsorted(visits, k, side="left")) / replicas
    se = np.sqrt(p * (1 - p) / replicas)
    qk = q ** k.astype(np.float64)
    qk_se = k * q ** (k - 1.0) * q_se
    dominated = p <= qk + 5 * np.sqrt(se**2 + qk_se**2)
    vis = (p > 0) & (k >= 1)
    slope = math.nan
    if vis.sum() >= 2:
        slope = float(np.polyfit(k[vis].astype(np.float64), np.log(p[vis]), 1)[0])
    return MaxTailTable(n, replicas, k, p, se, q, q_se, dominated, slope, k[vis])
