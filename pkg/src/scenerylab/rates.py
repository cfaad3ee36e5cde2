"""Closed-form asymptotic rates for random walk in random scenery.

Every ``rate_*`` function returns the leading asymptotic of
``log P{X_n >= b}`` except :func:`rate_T1`, which returns the probability
itself, and :func:`rate_T3c`, which returns the rate ``I(a)`` multiplying
``log n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy import optimize, special

TAGS = ("T1", "T2", "T3a", "T3b", "T3c", "P-special", "BCR-p1")
REQUIRED = {
    "T1": ("n", "b", "sigma2", "G0"),
    "T2": ("n", "b", "sigma2", "G0"),
    "T3a": ("n", "b", "sigma2", "detGamma"),
    "T3b": ("n", "b", "sigma2", "detGamma", "kappa"),
    "T3c": ("a", "sigma2", "detGamma", "kappa"),
    "P-special": ("n", "b", "D", "beta", "K2"),
    "BCR-p1": ("lam", "detGamma", "kappa"),
}
# b may be zero for T1 (probability 1/2); lam may be zero for BCR-p1
NONNEGATIVE = {("T1", "b"), ("BCR-p1", "lam")}


def mills_tail(x: float) -> float:
    """``1 - Phi(x)`` to full relative precision (scipy's erfc-based ``ndtr``)."""
    return float(special.ndtr(-x))


def log_mills_tail(x: float) -> float:
    """``log(1 - Phi(x))``, finite far beyond the range of :func:`mills_tail`."""
    return float(special.log_ndtr(-x))


def _positive(**params):
    for name, v in params.items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v!r}")


def _clt_scale(n: float, sigma2: float, G0: float) -> float:
    if not 2 * G0 - 1 > 1e-12:
        raise ValueError(f"G0 = {G0} gives a nonpositive variance 2 G0 - 1")
    _positive(n=n, sigma2=sigma2)
    return math.sqrt(sigma2 * n * (2 * G0 - 1))


def rate_T1(n: float, b: float, sigma2: float, G0: float) -> float:
    """``1 - Phi(b / sqrt(sigma^2 n (2 G(0) - 1)))`` (precise asymptotics, d >= 4)."""
    return mills_tail(b / _clt_scale(n, sigma2, G0))


def rate_T2(n: float, b: float, sigma2: float, G0: float) -> float:
    """``-b^2 / (2 n sigma^2 (2 G(0) - 1))`` (moderate deviations, d >= 3)."""
    s = _clt_scale(n, sigma2, G0)
    return -b * b / (2 * s * s)


def rate_T3a(n: float, b: float, sigma2: float, detGamma: float) -> float:
    _positive(n=n, sigma2=sigma2, detGamma=detGamma)
    return -(b * b / (n * math.log(n))) * math.pi * math.sqrt(detGamma) / (2 * sigma2)


def rate_T3b(n: float, b: float, sigma2: float, detGamma: float, kappa: float) -> float:
    _positive(n=n, sigma2=sigma2, detGamma=detGamma, kappa=kappa)
    return -(b / math.sqrt(n)) * detGamma**0.25 / (kappa**2 * math.sqrt(sigma2))


def critical_a(sigma2: float, detGamma: float, kappa: float) -> float:
    """Junction ``a*`` of the two branches of ``I(a)``."""
    return math.sqrt(sigma2) / (math.pi * kappa**2 * detGamma**0.25)


def rate_T3c(a: float, sigma2: float, detGamma: float, kappa: float) -> float:
    """``I(a)``: quadratic below ``a*``, affine above."""
    _positive(a=a, sigma2=sigma2, detGamma=detGamma, kappa=kappa)
    if a <= critical_a(sigma2, detGamma, kappa):
        return math.pi * a * a * math.sqrt(detGamma) / (2 * sigma2)
    return a * detGamma**0.25 / (math.sqrt(sigma2) * kappa**2) - 1 / (2 * math.pi * kappa**4)


def rate_T3c_variational(a: float, sigma2: float, detGamma: float, kappa: float) -> float:
    """``min_{x>=0} a^2 / (2 sigma^2 (c0 + x)) + x sqrt(detGamma) / (2 kappa^4)``, ``c0 = 1/(pi sqrt(detGamma))``.

    The walk pays the planar self-intersection rate for raising
    ``ell^(2) / (n log n)`` by ``x``; the scenery pays the Gaussian rate with
    the enlarged variance.
    """
    _positive(a=a, sigma2=sigma2, detGamma=detGamma, kappa=kappa)
    c0 = 1 / (math.pi * math.sqrt(detGamma))
    slope = math.sqrt(detGamma) / (2 * kappa**4)

    def cost(x):
        return a * a / (2 * sigma2 * (c0 + x)) + slope * x

    # stationary point of cost, clipped at x = 0
    x_star = max(0.0, a / math.sqrt(2 * sigma2 * slope) - c0)
    hi = 4 * (x_star + c0) + 1.0
    res = optimize.minimize_scalar(cost, bounds=(0.0, hi), method="bounded",
                                   options={"xatol": 1e-12 * hi})
    return float(min(res.fun, cost(0.0), cost(x_star)))


def rate_special(n: float, b: float, D: float, beta: float, K2: float) -> float:
    """``-(b / log n)^{1/2} (8 K2 D / (2 - beta))^{1/2}`` (d = 2, very large b)."""
    if not 1 <= beta < 2:
        raise ValueError("beta must lie in [1, 2)")
    _positive(n=n, b=b, D=D, K2=K2)
    return -math.sqrt(b / math.log(n)) * math.sqrt(8 * K2 * D / (2 - beta))


def rate_bcr(lam: float, detGamma: float, kappa: float) -> float:
    """``-lam sqrt(det Gamma) / (2 kappa^4)`` (planar self-intersection MDP)."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    _positive(detGamma=detGamma, kappa=kappa)
    return -lam * math.sqrt(detGamma) / (2 * kappa**4)


@dataclass(frozen=True)
class RateSpec:
    """Regime tag plus exactly the parameters that tag needs."""

    tag: str
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in REQUIRED:
            raise ValueError(f"unknown rate tag {self.tag!r}; choose from {', '.join(TAGS)}")
        need = set(REQUIRED[self.tag])
        have = set(self.params)
        if need - have:
            raise ValueError(f"{self.tag} needs {', '.join(sorted(need - have))}")
        if have - need:
            raise ValueError(f"{self.tag} does not take {', '.join(sorted(have - need))}")
        for k, v in self.params.items():
            ok = v >= 0 if (self.tag, k) in NONNEGATIVE else v > 0
            if not ok:
                raise ValueError(f"{k} must be positive")
        if self.tag == "P-special" and not 1 <= self.params["beta"] < 2:
            raise ValueError("beta must lie in [1, 2)")

    def evaluate(self) -> float:
        fn = {"T1": rate_T1, "T2": rate_T2, "T3a": rate_T3a, "T3b": rate_T3b,
              "T3c": rate_T3c, "P-special": rate_special, "BCR-p1": rate_bcr}[self.tag]
        return fn(**self.params)


# ---------------------------------------------------------------- regimes


@dataclass(frozen=True)
class Regime:
    tag: str
    note: str


def _cmp(x: tuple[float, float], y: tuple[float, float], eps: float = 1e-12) -> int:
    for a, b in zip(x, y):
        if a < b - eps:
            return -1
        if a > b + eps:
            return 1
    return 0


def classify_regime(d: int, beta: float, log_power: float = 0.0) -> Regime:
    """Which result covers ``b_n ~ n^beta (log n)^log_power`` in dimension ``d``.

    Growth rates are compared lexicographically on ``(beta, log_power)``.
    Sequences sitting exactly on a regime boundary come back ``ambiguous``.
    """
    if d < 2:
        raise ValueError("walks need d >= 2")
    g = (beta, log_power)
    if d >= 3:
        lo = _cmp(g, (0.5, 0.0))
        hi = _cmp(g, (2 / 3, 0.0))
        if lo == 0 or hi == 0:
            return Regime("ambiguous", "b_n on the boundary of the d>=3 moderate regime")
        if lo < 0:
            return Regime("outside", "b_n within the CLT scale sqrt(n)")
        if hi > 0:
            return Regime("outside", "b_n beyond n^(2/3): scenery regularity decides (not covered)")
        if d >= 4:
            t1 = _cmp(g, (2 / 3, -1.5))
            if t1 < 0:
                return Regime("T1", "precise asymptotics below a_n = n^(2/3) / log^(3/2) n; T2 also applies")
            if t1 == 0:
                return Regime("ambiguous", "b_n on the explicit a_n boundary of T1; T2 applies")
        return Regime("T2", "moderate deviation principle, walk behaves typically")
    lower = _cmp(g, (0.5, 0.5))
    mid = _cmp(g, (0.5, 1.0))
    upper = _cmp(g, (1.0, -1.0))
    if lower <= 0:
        return Regime("ambiguous" if lower == 0 else "outside",
                      "b_n at/below sqrt(n log n): planar CLT scale")
    if mid < 0:
        return Regime("T3a", "scenery-driven planar moderate deviations")
    if mid == 0:
        return Regime("T3c", "b_n = a sqrt(n) log n: rate I(a) log n")
    if upper < 0:
        return Regime("T3b", "walk contracts; rate involves the Gagliardo-Nirenberg constant")
    if upper == 0:
        return Regime("ambiguous", "b_n on the n/log n boundary between T3b and the special regime")
    if beta < 2:
        return Regime("P-special", "needs the exponential-tail constant D and K2")
    return Regime("outside", "b_n beyond n^2")


def exponent_of(n: float, b: float) -> float:
    """``log b / log n`` for a single ``(n, b)`` pair."""
    if n <= 1 or b <= 0:
        raise ValueError("need n > 1 and b > 0")
    return math.log(b) / math.log(n)


def classify(d: int, n: float, b: float) -> Regime:
    """:func:`classify_regime` for a single ``(n, b)`` pair via ``log b / log n``."""
    return classify_regime(d, exponent_of(n, b))
