"""Exhaustive enumeration at tiny sizes.

Probabilities are carried as integer numerators over a common denominator,
so every expectation below is an exact :class:`fractions.Fraction`; floats
appear only when a caller compares against the numerical engines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .scenery import SceneryLaw
from .walk import LocalTimeField, StepLaw

ENUMERATION_BUDGET = 10**8
PATH_CHUNK = 1 << 16
MAX_TAIL_SITES = 20


class OracleBudgetError(RuntimeError):
    """The enumeration would exceed the configured budget."""


def _integer_law(law: StepLaw) -> tuple[np.ndarray, int]:
    if law.exact is None:
        raise ValueError("the oracle needs a law with exact rational probabilities")
    Q = math.lcm(*(p.denominator for p in law.exact))
    w = np.array([int(p * Q) for p in law.exact], dtype=np.int64)
    return w, Q


def _check_budget(count: int, what: str) -> None:
    if count > ENUMERATION_BUDGET:
        raise OracleBudgetError(f"{what} needs {count:,} configurations (budget {ENUMERATION_BUDGET:,})")


def _paths(law: StepLaw, n: int, start: int, stop: int, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Positions ``S_0..S_n`` (shape ``(m, n+1, d)``) and integer weights of paths ``start..stop-1``."""
    k = law.support.shape[0]
    idx = np.arange(start, stop, dtype=np.int64)
    digits = np.empty((stop - start, n), dtype=np.int64)
    for t in range(n - 1, -1, -1):
        digits[:, t] = idx % k
        idx //= k
    pos = np.zeros((stop - start, n + 1, law.d), dtype=np.int64)
    np.cumsum(law.support[digits], axis=1, out=pos[:, 1:])
    return pos, np.prod(w[digits], axis=1)


def _coincidences(pos: np.ndarray) -> np.ndarray:
    """``c[m, i] = #{j : S_j = S_i}`` within each path."""
    eq = np.all(pos[:, :, None, :] == pos[:, None, :, :], axis=-1)
    return eq.sum(axis=2)


@dataclass(frozen=True)
class WalkExpectations:
    n: int
    ell2: Fraction
    ell3: Fraction
    ell_inf: dict[int, Fraction]
    p0: tuple[Fraction, ...]
    paths: int


def enumerate_walk_expectations(law: StepLaw, n: int) -> WalkExpectations:
    """Exact ``E ell^(2)``, ``E ell^(3)``, the law of ``ell^(inf)`` and ``P{S_k = 0}``, ``k <= n``.

    Local times count visits at times ``1..n``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    w, Q = _integer_law(law)
    total = law.support.shape[0] ** n
    _check_budget(total, f"{total} paths")
    s2 = s3 = 0
    linf: dict[int, int] = {}
    ret = [0] * (n + 1)
    for start in range(0, total, PATH_CHUNK):
        pos, wt = _paths(law, n, start, min(total, start + PATH_CHUNK), w)
        c = _coincidences(pos[:, 1:])
        s2 += int(wt @ c.sum(axis=1))
        s3 += int(wt @ (c * c).sum(axis=1))
        mx = c.max(axis=1)
        for v in np.unique(mx).tolist():
            linf[v] = linf.get(v, 0) + int(wt[mx == v].sum())
        at0 = np.all(pos == 0, axis=2)
        for k in range(n + 1):
            ret[k] += int(wt[at0[:, k]].sum())
    D = Q**n
    return WalkExpectations(n, Fraction(s2, D), Fraction(s3, D),
                            {k: Fraction(v, D) for k, v in sorted(linf.items())},
                            tuple(Fraction(r, D) for r in ret), total)


def _finite_law(law) -> tuple[np.ndarray, list[Fraction]]:
    if isinstance(law, SceneryLaw):
        if law.variant != "rademacher":
            raise ValueError(f"{law.variant} scenery has no finite support; pass (value, prob) pairs")
        return np.array([-1.0, 1.0]), [Fraction(1, 2), Fraction(1, 2)]
    vals = np.array([float(v) for v, _ in law])
    probs = [Fraction(p) for _, p in law]
    if sum(probs) != 1:
        raise ValueError("probabilities must sum to 1")
    return vals, probs


def exact_conditional_tail(field: LocalTimeField, law, b: float) -> Fraction:
    """``P{sum_z ell(z) xi(z) >= b}`` by summing over every scenery assignment.

    ``law`` is the rademacher :class:`SceneryLaw` or a sequence of
    ``(value, probability)`` pairs.
    """
    if field.n_sites > MAX_TAIL_SITES:
        raise OracleBudgetError(f"{field.n_sites} sites exceed the limit of {MAX_TAIL_SITES}")
    vals, probs = _finite_law(law)
    k, m = field.n_sites, len(vals)
    _check_budget(m**k, "scenery assignments")
    Q = math.lcm(*(p.denominator for p in probs))
    w = np.array([int(p * Q) for p in probs], dtype=np.int64)
    ell = field.counts.astype(np.float64)
    hits = 0
    total = m**k
    for start in range(0, total, PATH_CHUNK):
        idx = np.arange(start, min(total, start + PATH_CHUNK), dtype=np.int64)
        digits = np.empty((idx.shape[0], k), dtype=np.int64)
        for t in range(k - 1, -1, -1):
            digits[:, t] = idx % m
            idx //= m
        x = vals[digits] @ ell
        wt = np.prod(w[digits], axis=1)
        hits += sum(int(v) for v in wt[x >= b].tolist())
    return Fraction(hits, Q**k)


@dataclass(frozen=True)
class TwoWalkMoments:
    n: int
    A: tuple[Fraction, Fraction, Fraction]
    Lambda: Fraction
    Lambda_star: Fraction
    fields: int


def _unique_fields(pos: np.ndarray, wt: np.ndarray, lo: int, hi: int, index: dict) -> tuple[np.ndarray, np.ndarray]:
    """Dense local-time rows over times ``lo..hi``, merged over identical fields."""
    rows: dict[tuple, int] = {}
    for p, w in zip(pos[:, lo : hi + 1], wt.tolist()):
        key = tuple(sorted(_count(map(tuple, p.tolist())).items()))
        rows[key] = rows.get(key, 0) + w
    dense = np.zeros((len(rows), len(index)), dtype=np.float64)
    weights = []
    for r, (key, w) in enumerate(rows.items()):
        for z, c in key:
            dense[r, index[z]] = c
        weights.append(w)
    return dense, np.array(weights, dtype=object)


def _count(sites) -> dict:
    out: dict = {}
    for z in sites:
        out[z] = out.get(z, 0) + 1
    return out


def _pair_sum(left: np.ndarray, wl: np.ndarray, right: np.ndarray, wr: np.ndarray, power: int) -> int:
    """``sum_{a,b} w_a w_b (left_a . right_b)^power`` in exact integers."""
    wr_f = np.array([int(v) for v in wr], dtype=np.int64)
    total = 0
    step = max(1, (1 << 22) // max(1, right.shape[0]))
    for s in range(0, left.shape[0], step):
        prod = np.rint(left[s : s + step] @ right.T).astype(np.int64)
        rows = (prod**power) @ wr_f
        total += sum(int(a) * int(r) for a, r in zip(wl[s : s + step], rows.tolist()))
    return total


def exact_two_walk_moments(law: StepLaw, n: int) -> TwoWalkMoments:
    """Exact ``E A_n^m`` (``m <= 3``), ``E Lambda_n`` and ``E Lambda*_n`` for two independent walks.

    ``A_n`` pairs times ``1..n`` of the first walk with ``0..n-1`` of the
    second; the index ranges of ``Lambda`` and ``Lambda*`` match
    :func:`scenerylab.walk.triple_intersections`.  Paths are merged by their
    local-time fields before pairing, and the budget applies to field pairs.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    w, Q = _integer_law(law)
    total = law.support.shape[0] ** n
    _check_budget(total, f"{total} paths")
    pos, wt = _paths(law, n, 0, total, w)
    sites = {tuple(z) for z in np.unique(pos.reshape(-1, law.d), axis=0).tolist()}
    index = {z: i for i, z in enumerate(sorted(sites))}
    late, w_late = _unique_fields(pos, wt, 1, n, index)
    early, w_early = _unique_fields(pos, wt, 0, n - 1, index)
    _check_budget(late.shape[0] * early.shape[0], "field pairs")
    D = Q ** (2 * n)
    A = tuple(Fraction(_pair_sum(late, w_late, early, w_early, m), D) for m in (1, 2, 3))
    lam = Fraction(_pair_sum(late, w_late, early**2, w_early, 1), D)
    lam_star = Fraction(_pair_sum(early, w_early, late**2, w_late, 1), D)
    return TwoWalkMoments(n, A, lam, lam_star, late.shape[0] + early.shape[0])


def seeded_field(law: StepLaw, n: int, sites: int, seed0: int = 0, limit: int = 10_000) -> tuple[int, LocalTimeField]:
    """First seed ``>= seed0`` whose ``n``-step path occupies exactly ``sites`` sites."""
    from .walk import Stream, accumulate, sample_path

    for seed in range(seed0, seed0 + limit):
        f = accumulate(sample_path(law, n, Stream(seed)))
        if f.n_sites == sites:
            return seed, f
    raise ValueError(f"no path with {sites} sites among seeds {seed0}..{seed0 + limit - 1}")


def exact_values(fractions: Sequence[Fraction]) -> np.ndarray:
    return np.array([float(f) for f in fractions])
