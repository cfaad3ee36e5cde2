import math
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest

from scenerylab import green, oracle
from scenerylab.walk import StepLaw


def bessel_green_zero(law: StepLaw) -> float:
    """``G(0) = int_0^inf prod_i e^{-2 p_i t} I_0(2 p_i t) dt`` for laws on ``{0, +-e_i}``."""
    w = law.axial
    ps = [mp.mpf(float(p)) for p in w[1:]]
    with mp.workdps(20):
        f = lambda t: mp.fprod([mp.besseli(0, 2 * p * t) * mp.exp(-2 * p * t) for p in ps])
        return float(mp.quad(f, [0, 1, 10, 100, 1000, 10**4, 10**5, mp.inf]))


def test_small_return_probabilities():
    assert green.return_probabilities(StepLaw.lazy(2), 4).p0[1] == 0.5
    assert green.return_probabilities(StepLaw.simple(2), 4).p0[2] == 0.25
    assert math.isclose(green.return_probabilities(StepLaw.simple(3), 4).p0[2], 1 / 6, rel_tol=1e-15)


@pytest.mark.parametrize("law", [StepLaw.simple(2), StepLaw.lazy(2), StepLaw.simple(3), StepLaw.lazy(3)],
                         ids=["simple2", "lazy2", "simple3", "lazy3"])
def test_table_invariants(law):
    t = green.return_probabilities(law, 4096)
    assert t.p0[0] == 1.0
    assert np.all((t.p0 >= 0) & (t.p0 <= 1))
    if law.aperiodic:
        assert np.all(np.diff(t.p0[8:]) <= 0)
    assert np.array_equal(t.p0, green.return_probabilities(law, 4096).p0)


def test_axial_and_dense_engines_agree():
    for law in (StepLaw.lazy(3), StepLaw.simple(2)):
        a = green.return_probabilities(law, 200, method="axial").p0
        b = green.return_probabilities(law, 200, method="dense").p0
        assert np.max(np.abs(a - b)) < 1e-14


def test_dense_engine_for_general_law():
    law = StepLaw.from_items([([0, 0], Fraction(1, 4)), ([1, 1], Fraction(1, 8)), ([-1, -1], Fraction(1, 8)),
                              ([1, 0], Fraction(1, 4)), ([-1, 0], Fraction(1, 4))])
    assert law.axial is None
    t = green.return_probabilities(law, 8)
    ex = oracle.enumerate_walk_expectations(law, 8)
    assert np.allclose(t.p0, [float(p) for p in ex.p0], rtol=0, atol=1e-16)


def test_budget_error():
    with pytest.raises(green.BudgetError):
        green.return_probabilities(StepLaw.lazy(5), 1000, method="dense", memory_budget=10_000)


def test_extrapolated_entries_are_tagged():
    t = green.return_probabilities(StepLaw.lazy(3), 600, max_exact=256)
    assert t.exact_horizon == 256 and t.tags[256] == "exact" and t.tags[257] == "local-limit"
    with pytest.raises(green.BudgetError):
        t.require_exact(300)


def test_tail_constant_matches_local_limit():
    for law in (StepLaw.lazy(3), StepLaw.simple(3)):
        t = green.return_probabilities(law, 2**14)
        assert abs(t.tail_constant / green.local_limit_constant(law) - 1) < 1e-3


@pytest.mark.parametrize("law", [StepLaw.simple(3), StepLaw.lazy(3), StepLaw.lazy(5)], ids=["s3", "l3", "l5"])
def test_green_zero_vs_bessel_integral(law):
    est = green.green_zero(law, tol=1e-5)
    truth = bessel_green_zero(law)
    assert est.error <= 1e-5
    assert abs(est.value - truth) <= est.error


def test_green_zero_properties():
    law = StepLaw.lazy(5)
    assert green.green_zero(law).value > 1
    a = green.green_zero(StepLaw.simple(4), tol=1e-3).value
    b = green.green_zero(StepLaw.simple(4), tol=1e-5).value
    assert abs(a - b) < 1e-3
    with pytest.raises(ValueError):
        green.green_zero(StepLaw.lazy(2))


def test_expected_ell_small_cases(simple2):
    assert green.expected_ell2(simple2, 1) == 1
    assert green.expected_ell2(simple2, 2) == 2
    assert green.expected_ell3(simple2, 1) == 1
    assert green.expected_ell3(simple2, 2) == 2


@pytest.mark.parametrize("law,nmax", [(StepLaw.simple(2), 6), (StepLaw.lazy(2), 6), (StepLaw.simple(3), 5)],
                         ids=["s2", "l2", "s3"])
def test_expectations_match_enumeration(law, nmax):
    tab = green.return_probabilities(law, 64)
    for n in range(1, nmax + 1):
        ex = oracle.enumerate_walk_expectations(law, n)
        assert math.isclose(green.expected_ell2(law, n, tab), float(ex.ell2), rel_tol=1e-13)
        assert math.isclose(green.expected_ell3(law, n, tab), float(ex.ell3), rel_tol=1e-13)


def test_telescoping_identity(lazy3):
    tab = green.return_probabilities(lazy3, 600)
    for n in (2, 17, 300, 512):
        diff = green.expected_ell2(lazy3, n, tab) - green.expected_ell2(lazy3, n - 1, tab)
        assert math.isclose(diff, 1 + 2 * tab.p0[1:n].sum(), rel_tol=1e-12)


def test_ell2_ratio_increasing_and_bounded(lazy3):
    g0 = green.green_zero(lazy3, tol=1e-6)
    tab = green.return_probabilities(lazy3, 2**17)
    ratios = [green.expected_ell2(lazy3, n, tab) / n for n in (2**10, 2**14, 2**17)]
    assert ratios == sorted(ratios)
    assert all(1 <= r <= 2 * (g0.value + g0.error) - 1 + 1e-9 for r in ratios)


def test_planar_ell2_growth():
    law = StepLaw.lazy(2)
    n = 2**20
    limit = 1 / (math.pi * math.sqrt(law.det_cov))
    ratio = green.expected_ell2(law, n) / (n * math.log(n))
    assert abs(ratio / limit - 1) < 0.15


def test_K2():
    law = StepLaw.lazy(2)
    with pytest.raises(ValueError):
        green.estimate_K2(StepLaw.lazy(3), 100)
    with pytest.raises(ValueError):
        green.estimate_K2(law, 8)
    tab = green.return_probabilities(law, 2**18)
    k14, k15 = green.estimate_K2(law, 2**14, tab), green.estimate_K2(law, 2**15, tab)
    assert 0 < k14 < math.inf and abs(k15 - k14) < 0.2 * k14
    ref = 1 / (2 * math.pi * math.sqrt(law.det_cov))
    assert abs(green.estimate_K2(law, 2**18, tab) / ref - 1) < 0.10


def test_sum_Gn_squared():
    assert green.sum_Gn_squared(StepLaw.simple(3), 0) == 1.0
    law = StepLaw.simple(3)
    tab = green.return_probabilities(law, 2**13)
    r = [green.sum_Gn_squared(law, 2**k, tab) / math.sqrt(2**k) for k in range(6, 13)]
    assert max(r) < 2 * min(r)
    assert all(b < a * 1.05 for a, b in zip(r[2:], r[3:]))
    l5 = StepLaw.lazy(5)
    a, b = green.sum_Gn_squared(l5, 2**10), green.sum_Gn_squared(l5, 2**12)
    assert b - a < 0.05 * a


def test_sum_Gn_squared_brute_force():
    law = StepLaw.simple(2)
    n = 5
    pos = {(0, 0): 1.0}
    G = {(0, 0): 1.0}
    for _ in range(n):
        nxt = {}
        for z, p in pos.items():
            for v, q in zip(law.support.tolist(), law.probs.tolist()):
                y = (z[0] + v[0], z[1] + v[1])
                nxt[y] = nxt.get(y, 0.0) + p * q
        pos = nxt
        for z, p in pos.items():
            G[z] = G.get(z, 0.0) + p
    assert math.isclose(green.sum_Gn_squared(law, n), sum(g * g for g in G.values()), rel_tol=1e-13)


def test_sum_Gn_squared_refuses_extrapolation(lazy3):
    tab = green.return_probabilities(lazy3, 400, max_exact=100)
    with pytest.raises(green.BudgetError):
        green.sum_Gn_squared(lazy3, 200, tab)


def test_cache_round_trip(tmp_path, lazy3):
    t1 = green.cached_return_probabilities(lazy3, 500, tmp_path)
    t2 = green.cached_return_probabilities(lazy3, 500, tmp_path)
    fresh = green.return_probabilities(lazy3, 500)
    assert t1.p0.tobytes() == t2.p0.tobytes() == fresh.p0.tobytes()
    assert t2.exact_horizon == fresh.exact_horizon
    path = next(tmp_path.iterdir())
    with pytest.raises(ValueError):
        green.load_table(StepLaw.simple(3), path)
