"""Exponential tilting of ``X_n`` given a fixed local-time field.

Conditionally on the walk, ``X_n = sum_z ell(z) xi(z)`` is a weighted sum of
independent scenery values.  Tilting every site by ``e^{h ell(z) xi(z)}``
moves the mean to ``M(h)``; choosing ``M(h) = b`` turns the tail event into a
typical one, which gives both the saddlepoint approximation and an exact
importance-sampling identity.

Per-site quantities depend on a site only through ``ell(z)``, so every sum
below runs over the distinct local-time values with their multiplicities.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import rng
from .rates import log_mills_tail, mills_tail
from .results import EstimateResult
from .scenery import SceneryLaw, TiltDomainError, tilted_sample
from .walk import LocalTimeField

SOLVER_RTOL = 1e-9
NEWTON_MAX_ITER = 100
BISECTION_MAX_ITER = 200
ESSEEN_C = 0.56  # heuristic: the absolute constant is not known
MIN_ESS = 10.0
IS_CHUNK_ENTRIES = 1 << 22


class TiltSolveError(ValueError):
    """The saddle-point equation has no solution inside the tilt guard."""


def _levels(field: LocalTimeField) -> tuple[np.ndarray, np.ndarray]:
    ell, mult = np.unique(field.counts, return_counts=True)
    return ell.astype(np.float64), mult.astype(np.float64)


@dataclass(frozen=True, eq=False)
class TiltState:
    """Tilted moments of ``X_n`` at tilt ``h``.

    ``M``, ``V2`` and ``G3`` are the tilted mean, variance and third absolute
    central moment of ``X_n``; ``iterations`` counts Newton/bisection steps
    when the state came out of :func:`solve_tilt`.
    """

    h: float
    M: float
    V2: float
    field: LocalTimeField
    law: SceneryLaw
    iterations: int = 0
    _levels: tuple = field(default=None, repr=False)

    @property
    def weights(self) -> np.ndarray:
        """Per-site tilts ``ell(z) h`` in site order."""
        return self.field.counts * self.h

    @cached_property
    def G3(self) -> float:
        ell, mult = self._levels
        return float(np.sum(mult * ell**3 * self.law.tilted_abs3(ell * self.h)))

    @cached_property
    def log_cgf_sum(self) -> float:
        """``sum_z log f(ell(z) h)``."""
        ell, mult = self._levels
        return float(np.sum(mult * self.law.log_cgf(ell * self.h)))

    @property
    def triple_sum(self) -> int:
        return self.field.ell3

    @property
    def Vn2(self) -> float:
        """Untilted conditional variance ``sigma^2 ell^(2)``."""
        return self.law.variance * self.field.ell2

    @property
    def lyapunov(self) -> float:
        """``gamma V_n^{-3} sum_z ell^3``."""
        return self.law.third_abs_moment * self.field.ell3 / self.Vn2**1.5

    @property
    def hypotheses(self) -> dict[str, float | bool]:
        """Size conditions on the field, reported but never enforced."""
        n = self.field.n
        bound = n * math.log(n) ** 2 if n > 1 else 1.0
        return {
            "triple_sum_ratio": self.field.ell3 / bound,
            "triple_sum_ok": self.field.ell3 <= bound,
            "variance_ratio": self.Vn2 / n,
        }


def _moments(law: SceneryLaw, levels, h: float) -> tuple[float, float]:
    ell, mult = levels
    w = ell * h
    M = float(np.sum(mult * ell * law.tilted_mean(w)))
    V2 = float(np.sum(mult * ell * ell * law.tilted_var(w)))
    return M, V2


def tilt_state(field: LocalTimeField, law: SceneryLaw, h: float) -> TiltState:
    """Tilted moments at ``h``; requires ``0 <= h`` and ``h ell_inf < theta``."""
    if not h >= 0:
        raise TiltDomainError("tilt must be >= 0")
    if h * field.ell_inf >= law.theta:
        raise TiltDomainError(f"h * ell_inf = {h * field.ell_inf} reaches theta = {law.theta}")
    levels = _levels(field)
    M, V2 = _moments(law, levels, h)
    return TiltState(h, M, V2, field, law, 0, levels)


def tilt_guard(field: LocalTimeField, law: SceneryLaw) -> float:
    """Largest admissible tilt ``theta / (2 ell_inf)`` (``inf`` when unrestricted)."""
    return law.theta / (2 * field.ell_inf)


def solve_tilt(field: LocalTimeField, law: SceneryLaw, b: float) -> TiltState:
    """Solve ``M(h) = b`` by safeguarded Newton iteration.

    Starts from ``b / (sigma^2 ell^(2))``; steps leaving the current bracket
    are replaced by bisection.
    """
    if not b > 0:
        raise ValueError("solve_tilt needs b > 0")
    if b >= field.n * law.max_abs:
        raise TiltSolveError(f"b = {b} is at or beyond the support bound {field.n * law.max_abs}")
    levels = _levels(field)
    tol = SOLVER_RTOL * b
    lo, hi = 0.0, tilt_guard(field, law)
    if math.isfinite(hi):
        M_hi, _ = _moments(law, levels, hi)
        if M_hi < b:
            raise TiltSolveError(f"target b = {b} needs h beyond the guard theta/(2 ell_inf) "
                                 f"(M there is {M_hi}); use naive sampling")
    h = b / (law.variance * field.ell2)
    if h >= hi:
        h = 0.5 * hi
    it = 0
    while True:
        M, V2 = _moments(law, levels, h)
        if abs(M - b) <= tol:
            return TiltState(h, M, V2, field, law, it, levels)
        if M < b:
            lo = h
        else:
            hi = h
        it += 1
        if it > NEWTON_MAX_ITER + BISECTION_MAX_ITER:
            raise TiltSolveError(f"no convergence after {it} steps (h = {h}, M - b = {M - b})")
        step = h - (M - b) / V2 if V2 > 0 else math.nan
        if it <= NEWTON_MAX_ITER and lo < step < hi:
            h = step
        elif math.isfinite(hi):
            h = 0.5 * (lo + hi)
        else:
            h = 2 * h
        if hi - lo <= 1e-300:
            return TiltState(h, *_moments(law, levels, h), field, law, it, levels)


@dataclass(frozen=True)
class SaddlepointResult:
    refined: float
    log_refined: float
    leading: float
    esseen_bound: float
    state: TiltState = field(repr=False)
    esseen_c: float = ESSEEN_C
    notes: tuple[str, ...] = ("esseen_bound uses a heuristic constant",)


def _leading(Vn: float, b: float) -> float:
    return Vn / (math.sqrt(2 * math.pi) * b) * math.exp(-b * b / (2 * Vn * Vn))


def saddlepoint_tail(field: LocalTimeField, law: SceneryLaw, b: float,
                     esseen_c: float = ESSEEN_C) -> SaddlepointResult:
    """Saddlepoint approximation of ``P{X_n >= b | field}``.

    ``refined`` is ``exp(-h b + sum log f(ell h) + h^2 V2 / 2) * (1 - Phi(h sqrt(V2)))``;
    ``leading`` the first-order Gaussian form.  ``esseen_bound`` is
    ``2 C G3 / V2^{3/2}`` times the tilting prefactor, a rough error
    diagnostic that is never added to the estimate.
    """
    st = solve_tilt(field, law, b)
    x = st.h * math.sqrt(st.V2)
    expo = -st.h * b + st.log_cgf_sum + 0.5 * st.h * st.h * st.V2
    tail = mills_tail(x)
    if tail > 1e-290:
        refined = math.exp(expo) * tail
        log_refined = math.log(refined) if refined > 0 else expo + log_mills_tail(x)
    else:
        log_refined = expo + log_mills_tail(x)
        refined = math.exp(log_refined)
    Vn = math.sqrt(st.Vn2)
    prefactor = math.exp(-st.h * b + st.log_cgf_sum)
    bound = 2 * esseen_c * st.G3 / st.V2**1.5 * prefactor
    return SaddlepointResult(refined, log_refined, _leading(Vn, b), bound, st, esseen_c)


def conditional_gaussian_tail(field: LocalTimeField, sigma2: float, b: float) -> float:
    """``P{X_n >= b | field}`` for centred gaussian scenery of variance ``sigma2``."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    return mills_tail(b / math.sqrt(sigma2 * field.ell2))


def sandwich_constant(law: SceneryLaw) -> float:
    """``max{sigma^2 f'(theta/2), f'''(theta/2)/2}`` for laws with finite ``theta``."""
    if not math.isfinite(law.theta):
        raise ValueError("sandwich constant needs a finite theta")
    _, f1, _, f3 = law.cgf_derivatives(np.array(law.theta / 2))
    return float(max(law.variance * f1, f3 / 2))


def tilted_draws(state: TiltState, replicas: int, generator: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``(log weight, T)`` for ``replicas`` draws of ``T = sum_z Y_z`` under the tilt.

    Draws are generated in fixed-size chunks of rows so the stream layout
    does not depend on anything but ``replicas`` and the field.
    """
    ell = state.field.counts.astype(np.float64)
    w = ell * state.h
    k = ell.shape[0]
    chunk = max(1, IS_CHUNK_ENTRIES // k)
    T = np.empty(replicas)
    for s in range(0, replicas, chunk):
        e = min(replicas, s + chunk)
        xi = tilted_sample(state.law, w, generator, size=(e - s, k))
        T[s:e] = xi @ ell
    return state.log_cgf_sum - state.h * T, T


def tilted_is_estimate(field: LocalTimeField, law: SceneryLaw, b: float, replicas: int,
                       seed: int, replica: int = 0) -> EstimateResult:
    """Unbiased importance-sampling estimate of ``P{X_n >= b | field}``.

    Uses the saddle-point tilt for ``b > 0`` and no tilt otherwise; targets
    beyond the support of a bounded scenery return zero.  The
    random numbers come from the ``(seed, replica)`` tilt stream.
    """
    if replicas < 100:
        raise ValueError("tilted_is_estimate needs at least 100 replicas")
    t0 = time.perf_counter()
    if b > field.n * law.max_abs:
        # beyond the support of a bounded scenery: the tail is exactly zero
        return EstimateResult(0.0, 0.0, replicas, "tilted-IS", seed, time.perf_counter() - t0,
                              (), {"ess": 0.0, "h": math.inf, "iterations": 0})
    st = solve_tilt(field, law, b) if b > 0 else tilt_state(field, law, 0.0)
    gen = rng.generator(seed, replica, rng.TILT_TAG)
    logw, T = tilted_draws(st, replicas, gen)
    vals = np.where(T >= b, np.exp(logw), 0.0)
    p = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(replicas))
    sq = float(np.sum(vals * vals))
    ess = float(np.sum(vals) ** 2 / sq) if sq > 0 else 0.0
    flags = ("low-ess",) if ess < MIN_ESS else ()
    return EstimateResult(min(p, 1.0), se, replicas, "tilted-IS", seed, time.perf_counter() - t0,
                          flags, {"ess": ess, "h": st.h, "iterations": st.iterations})
