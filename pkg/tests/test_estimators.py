import math

import numpy as np
import pytest

from scenerylab import green, rates
from scenerylab.estimators import (RareEventError, conditional_mc, ell2_concentration, empirical_rate,
                                   max_local_time_tail, naive_mc, rwrs_batch, set_workers)
from scenerylab.results import EstimateResult
from scenerylab.scenery import SceneryLaw, rwrs_value
from scenerylab.walk import StepLaw, Stream, accumulate, sample_path

G, RAD = SceneryLaw.gaussian(), SceneryLaw.rademacher()


def test_result_invariants():
    with pytest.raises(ValueError):
        EstimateResult(1.5, 0.0, 10, "naive", 1)
    with pytest.raises(ValueError):
        EstimateResult(0.5, -1.0, 10, "naive", 1)
    assert EstimateResult(0.0, 0.0, 10, "naive", 1).log_p_hat == -math.inf


@pytest.mark.parametrize("d,law", [(2, "lazy"), (3, "simple"), (5, "lazy")])
def test_kernel_matches_sitewise_value(d, law):
    w = StepLaw.named(law, d)
    n = 3000 if d == 5 else 700
    x = rwrs_batch(w, G, n, 13, 2, 6)
    for i, r in enumerate(range(2, 6)):
        ref = rwrs_value(accumulate(sample_path(w, n, Stream(13, r))), G, 13, r)
        assert abs(x[i] - ref) <= 1e-12 * n


def test_naive_trivial_bounds(lazy3):
    assert naive_mc(lazy3, RAD, 64, -64, 500, 1).p_hat == 1.0
    assert naive_mc(lazy3, RAD, 64, 64.5, 500, 1, guard=False).p_hat == 0.0


def test_naive_symmetry(lazy3):
    r = naive_mc(lazy3, G, 256, 0.0, 20_000, 3)
    assert abs(r.p_hat - 0.5) < 4 * r.stderr


def test_rare_event_guard(lazy3):
    with pytest.raises(RareEventError):
        naive_mc(lazy3, G, 256, 300.0, 1000, 1)


def test_conditional_gaussian_half(lazy3):
    r = conditional_mc(lazy3, G, 300, 0.0, 50, 0, 1)
    assert r.p_hat == 0.5 and r.stderr == 0.0 and r.estimator == "conditional-exact"


def test_conditional_beats_naive_variance(lazy3):
    b = 30.0
    nv = naive_mc(lazy3, G, 256, b, 4000, 5)
    cv = conditional_mc(lazy3, G, 256, b, 4000, 0, 5)
    assert cv.stderr < nv.stderr


def test_conditional_rademacher_vs_naive(lazy3):
    b = 40.0
    nv = naive_mc(lazy3, RAD, 512, b, 20_000, 2)
    cv = conditional_mc(lazy3, RAD, 512, b, 300, 500, 2)
    assert abs(nv.p_hat - cv.p_hat) < 4 * math.hypot(nv.stderr, cv.stderr)
    assert cv.estimator == "conditional-IS" and not cv.flagged


@pytest.mark.parametrize("scenery", [G, RAD], ids=["gaussian", "rademacher"])
@pytest.mark.parametrize("d,n", [(2, 256), (3, 1024)])
def test_estimators_agree(scenery, d, n):
    law = StepLaw.lazy(d)
    b = 1.5 * math.sqrt(green.expected_ell2(law, n))
    ests = [naive_mc(law, scenery, n, b, 10_000, 8),
            conditional_mc(law, scenery, n, b, 200, 300, 8, inner="is")]
    if scenery.variant == "gaussian":
        ests.append(conditional_mc(law, scenery, n, b, 2000, 0, 8))
    for i in range(len(ests)):
        for j in range(i + 1, len(ests)):
            a, c = ests[i], ests[j]
            assert abs(a.p_hat - c.p_hat) < 4 * math.hypot(a.stderr, c.stderr)


def test_stderr_scaling(lazy3):
    a = naive_mc(lazy3, G, 128, 10.0, 4000, 1)
    b = naive_mc(lazy3, G, 128, 10.0, 16000, 1)
    assert abs(a.stderr / b.stderr / 2 - 1) < 0.3


def test_results_independent_of_workers(lazy3):
    set_workers(1)
    a = naive_mc(lazy3, G, 300, 5.0, 3000, 4)
    set_workers(4)
    b = naive_mc(lazy3, G, 300, 5.0, 3000, 4)
    set_workers(None)
    assert a.p_hat == b.p_hat and a.stderr == b.stderr


def test_empirical_rate_exact_synthetic():
    pts = [(n, n**0.6, rates.rate_T2(n, n**0.6, 1.3, 1.52)) for n in (1e3, 1e4, 1e5, 1e6)]
    fit = empirical_rate(pts, "T2")
    assert abs(fit.slope - (-1 / (2 * 1.3 * 2.04))) < 1e-12
    assert abs(fit.intercept) < 1e-10 and fit.r2 > 1 - 1e-12
    fit0 = empirical_rate(pts, "T2", intercept=False)
    assert abs(fit0.slope - (-1 / (2 * 1.3 * 2.04))) < 1e-12


def test_empirical_rate_noisy_synthetic():
    g = np.random.default_rng(3)
    slope = -0.7
    pts = []
    for n in np.geomspace(1e3, 1e6, 20):
        b = n**0.55
        pts.append((n, b, slope * b * b / (n * math.log(n)) + 0.2 + g.normal(0, 0.05)))
    fit = empirical_rate(pts, "T3a")
    assert abs(fit.slope - slope) < 3 * fit.slope_stderr
    with pytest.raises(ValueError):
        empirical_rate(pts, "T9")
    with pytest.raises(ValueError):
        empirical_rate([(10, 1, -math.inf), (20, 2, -1.0)])


def test_concentration_table(lazy3):
    t = ell2_concentration(lazy3, 1024, np.linspace(0, 4000, 21), 5000, 2)
    assert t.two_sided[0] == 1.0
    assert np.all(np.diff(t.two_sided) <= 0)
    assert np.all(t.upper + t.lower >= t.two_sided - 1e-15)
    assert np.allclose((t.upper + t.lower)[1:], t.two_sided[1:])
    assert math.isclose(t.mean, green.expected_ell2(lazy3, 1024))
    diag = t.diagnostics()
    assert np.allclose(diag["x23_over_n13"], t.x ** (2 / 3) / 1024 ** (1 / 3))


def test_max_local_time(lazy3):
    t = max_local_time_tail(lazy3, 500, [1, 2, 3, 501], 20_000, 3)
    assert t.p[0] == t.q_hat
    assert t.p[-1] == 0.0
    assert t.all_dominated
