"""Fast invariant checks runnable from an installed package."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import green, oracle, rates, rng
from .saddlepoint import conditional_gaussian_tail, saddlepoint_tail, solve_tilt, tilt_state
from .scenery import SceneryLaw
from .walk import StepLaw, Stream, accumulate, dyadic_terms, pair_intersections, sample_path


def _rng_matches_numpy() -> str:
    bg = np.random.Philox(key=rng.stream_key(11, 3), counter=[6, 0, 0, 0])
    expect = bg.random_raw(4)
    got = rng.raw_block(11, 3, (7, 0, 0, 0))
    assert tuple(int(v) for v in expect) == got, "Philox block differs from numpy"
    return "bit-exact"


def _local_time_identities() -> str:
    for d in (2, 3, 4):
        law = StepLaw.lazy(d)
        for r in range(20):
            path = sample_path(law, 200, Stream(5, r))
            f = accumulate(path)
            pos = path.positions
            pairs = int(np.all(pos[:, None, :] == pos[None, :, :], axis=-1).sum())
            assert f.ell2 == pairs and int(f.counts.sum()) == 200
    return "60 paths"


def _dyadic_identity() -> str:
    law = StepLaw.simple(3)
    p0 = green.return_probabilities(law, 64).p0
    path = sample_path(law, 64, Stream(2))
    f = accumulate(path)
    terms = dyadic_terms(path, p0)
    lhs = f.ell2 - green.expected_ell2(law, 64)
    # ell2 = n + 2 * sum of all cross-block counts
    rhs = 2 * terms.total()
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs)), (lhs, rhs)
    return f"{lhs:.6g}"


def _oracle_agrees() -> str:
    law = StepLaw.simple(2)
    ex = oracle.enumerate_walk_expectations(law, 6)
    e2 = green.expected_ell2(law, 6)
    assert float(ex.ell2) == e2, (ex.ell2, e2)
    return f"E ell2 = {ex.ell2}"


def _gaussian_closure() -> str:
    law = StepLaw.lazy(3)
    g = SceneryLaw.gaussian(1.3)
    worst = 0.0
    for r in range(10):
        f = accumulate(sample_path(law, 300, Stream(9, r)))
        b = 3 * math.sqrt(g.variance * f.ell2)
        a = saddlepoint_tail(f, g, b).refined
        c = conditional_gaussian_tail(f, g.variance, b)
        worst = max(worst, abs(a / c - 1))
    assert worst < 1e-12, worst
    return f"max rel err {worst:.2g}"


def _tilt_derivative() -> str:
    f = accumulate(sample_path(StepLaw.lazy(2), 200, Stream(4)))
    for law in (SceneryLaw.rademacher(), SceneryLaw.laplace(2.0), SceneryLaw.uniform(1.0)):
        h, eps = 0.3 / f.ell_inf, 1e-6 / f.ell_inf
        dm = (tilt_state(f, law, h + eps).M - tilt_state(f, law, h - eps).M) / (2 * eps)
        v2 = tilt_state(f, law, h).V2
        assert abs(dm / v2 - 1) < 1e-6, (law.variant, dm, v2)
        st = solve_tilt(f, law, 0.5 * math.sqrt(law.variance * f.ell2))
        assert abs(st.M / (0.5 * math.sqrt(law.variance * f.ell2)) - 1) <= 1e-9
    return "3 laws"


def _rate_continuity() -> str:
    s2, det, k = 1.7, 0.4, 0.9
    a = rates.critical_a(s2, det, k)
    v = rates.rate_T3c(a, s2, det, k)
    assert abs(v - 1 / (2 * math.pi * k**4)) < 1e-12
    return f"I(a*) = {v:.12g}"


def _green_zero() -> str:
    est = green.green_zero(StepLaw.simple(3), tol=1e-4)
    assert abs(est.value - 1.516386059) < max(est.error, 1e-4), est
    return f"G0 = {est.value:.6f} +- {est.error:.1g}"


CHECKS: list[tuple[str, Callable[[], str]]] = [
    ("philox stream matches numpy", _rng_matches_numpy),
    ("local-time identities", _local_time_identities),
    ("dyadic decomposition identity", _dyadic_identity),
    ("enumeration oracle vs engine", _oracle_agrees),
    ("gaussian closure of the tilt", _gaussian_closure),
    ("tilted mean derivative equals variance", _tilt_derivative),
    ("rate function continuity", _rate_continuity),
    ("green function of the simple cubic walk", _green_zero),
]


def run(echo: Callable[[str], None] = print) -> bool:
    ok = True
    for name, check in CHECKS:
        try:
            detail = check()
            echo(f"PASS  {name}: {detail}")
        except Exception as exc:  # report every failure, keep going
            ok = False
            echo(f"FAIL  {name}: {type(exc).__name__}: {exc}")
    return ok
