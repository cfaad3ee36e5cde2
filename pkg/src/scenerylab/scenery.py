"""Centred scenery laws, site-keyed sampling and exponential tilting.

A scenery value is a pure function of ``(law, site, seed, replica)``: the
site coordinates are written into the Philox counter, so no shared map is
needed when many walks are evaluated in parallel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numba as nb
import numpy as np
from scipy import integrate, special

from . import rng
from .walk import LocalTimeField, WalkPath

GAUSSIAN, RADEMACHER, LAPLACE, UNIFORM = 0, 1, 2, 3
VARIANTS = {"gaussian": GAUSSIAN, "rademacher": RADEMACHER, "laplace": LAPLACE, "uniform": UNIFORM}
DEFAULT_PARAM = {"gaussian": 1.0, "rademacher": 1.0, "laplace": 1.0, "uniform": 1.0}
COMPENSATED_SITES = 100_000
_SERIES_CUTOFF = 0.5


class TiltDomainError(ValueError):
    """Tilt parameter outside the domain of the cumulant generating function."""


@nb.njit(cache=True)
def site_value(code, param, k0, k1, coords):
    """Scenery value at ``coords`` for stream key ``(k0, k1)``."""
    c0, c1, c2 = rng.site_counter(coords)
    w0, w1, w2, w3 = rng.philox_block(c0, c1, c2, np.uint64(rng.SITE_TAG), k0, k1)
    if code == GAUSSIAN:
        u1 = (float(w0 >> np.uint64(11)) + 1.0) * (1.0 / 9007199254740992.0)
        u2 = rng.u64_to_unit(w1)
        return param * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
    if code == RADEMACHER:
        return 1.0 if (w0 >> np.uint64(63)) == np.uint64(1) else -1.0
    if code == LAPLACE:
        mag = -math.log1p(-rng.u64_to_unit(w0)) / param
        return mag if (w1 >> np.uint64(63)) == np.uint64(1) else -mag
    return param * (2.0 * rng.u64_to_unit(w0) - 1.0)


def _uniform_moment_integrals(h: np.ndarray, a: float) -> tuple[np.ndarray, ...]:
    """``E[xi^k e^{h xi}]`` for ``k = 0..3`` under Uniform(-a, a)."""
    h = np.asarray(h, dtype=np.float64)
    out = [np.empty_like(h) for _ in range(4)]
    small = np.abs(a * h) < _SERIES_CUTOFF
    if np.any(small):
        hs = h[small]
        for k in range(4):
            acc = np.zeros_like(hs)
            term_h = np.ones_like(hs)
            for m in range(40):
                j = k + m
                if j % 2 == 0:
                    acc += term_h * a**j / (j + 1)
                term_h = term_h * hs / (m + 1)
            out[k][small] = acc
    big = ~small
    if np.any(big):
        x = h[big]
        s, c = np.sinh(a * x), np.cosh(a * x)
        i0 = 2 * s / x
        i1 = 2 * a * c / x - 2 * s / x**2
        i2 = 2 * a**2 * s / x - 4 * a * c / x**2 + 4 * s / x**3
        i3 = 2 * a**3 * c / x - 6 * a**2 * s / x**2 + 12 * a * c / x**3 - 12 * s / x**4
        for k, v in enumerate((i0, i1, i2, i3)):
            out[k][big] = v / (2 * a)
    return tuple(out)


def _exp_abs3(lam: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``E|X - t|^3`` for ``X ~ Exp(lam)``."""
    raw = 6 / lam**3 - 6 * t / lam**2 + 3 * t**2 / lam - t**3
    return np.where(t > 0, 12 * np.exp(-lam * np.maximum(t, 0)) / lam**3 - raw, raw)


@dataclass(frozen=True)
class SceneryLaw:
    """Centred i.i.d. scenery distribution.

    ``param`` is the standard deviation (gaussian), the rate ``D`` of the
    symmetric Laplace law, or the half-width of the centred uniform law;
    rademacher ignores it.
    """

    variant: str
    param: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown scenery {self.variant!r}")
        if not self.param > 0:
            raise ValueError("scenery parameter must be positive")

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "SceneryLaw":
        return cls("gaussian", sigma)

    @classmethod
    def rademacher(cls) -> "SceneryLaw":
        return cls("rademacher", 1.0)

    @classmethod
    def laplace(cls, rate: float = 1.0) -> "SceneryLaw":
        return cls("laplace", rate)

    @classmethod
    def uniform(cls, half_width: float = 1.0) -> "SceneryLaw":
        return cls("uniform", half_width)

    @property
    def code(self) -> int:
        return VARIANTS[self.variant]

    @cached_property
    def variance(self) -> float:
        p = self.param
        return {"gaussian": p * p, "rademacher": 1.0, "laplace": 2 / p**2, "uniform": p * p / 3}[self.variant]

    @cached_property
    def third_abs_moment(self) -> float:
        """``gamma = E|xi|^3``."""
        p = self.param
        return {"gaussian": 2 * math.sqrt(2 / math.pi) * p**3, "rademacher": 1.0,
                "laplace": 6 / p**3, "uniform": p**3 / 4}[self.variant]

    @property
    def theta(self) -> float:
        """Supremum of the domain where ``E e^{h xi}`` is finite."""
        return self.param if self.variant == "laplace" else math.inf

    @property
    def max_abs(self) -> float:
        return {"rademacher": 1.0, "uniform": self.param}.get(self.variant, math.inf)

    def _check(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        if self.variant == "laplace" and np.any(np.abs(h) >= self.param):
            raise TiltDomainError(f"|h| must stay below theta = {self.param}")
        return h

    def cgf_derivatives(self, h) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(f, f', f'', f''')`` of ``f(h) = E e^{h xi}``."""
        h = self._check(h)
        p = self.param
        if self.variant == "gaussian":
            s2 = p * p
            f = np.exp(0.5 * s2 * h * h)
            return f, s2 * h * f, (s2 + s2 * s2 * h * h) * f, (3 * s2 * s2 * h + s2**3 * h**3) * f
        if self.variant == "rademacher":
            return np.cosh(h), np.sinh(h), np.cosh(h), np.sinh(h)
        if self.variant == "laplace":
            D2, h2 = p * p, h * h
            q = D2 - h2
            return D2 / q, 2 * D2 * h / q**2, 2 * D2 * (D2 + 3 * h2) / q**3, 24 * D2 * h * (D2 + h2) / q**4
        return _uniform_moment_integrals(h, p)

    def cgf(self, h):
        return self.cgf_derivatives(h)[0]

    def log_cgf(self, w) -> np.ndarray:
        """``log f(w)`` computed without overflow."""
        w = self._check(w)
        p = self.param
        if self.variant == "gaussian":
            return 0.5 * p * p * w * w
        if self.variant == "rademacher":
            a = np.abs(w)
            return a + np.log1p(np.exp(-2 * a)) - math.log(2.0)
        if self.variant == "laplace":
            return -np.log1p(-(w / p) ** 2)
        x = np.abs(p * w)
        with np.errstate(divide="ignore", invalid="ignore"):
            big = x + np.log1p(-np.exp(-2 * x)) - math.log(2.0) - np.log(np.where(x > 0, x, 1.0))
        series = np.log(_uniform_moment_integrals(np.where(x < _SERIES_CUTOFF, w, 0.0), p)[0])
        return np.where(x < _SERIES_CUTOFF, series, big)

    def tilted_mean(self, w) -> np.ndarray:
        """Mean of ``xi`` under the tilt ``e^{w xi} / f(w)``."""
        w = self._check(w)
        p = self.param
        if self.variant == "gaussian":
            return p * p * w
        if self.variant == "rademacher":
            return np.tanh(w)
        if self.variant == "laplace":
            return 2 * w / (p * p - w * w)
        x = p * w
        small = np.abs(x) < _SERIES_CUTOFF
        f, f1, _, _ = _uniform_moment_integrals(np.where(small, w, 0.0), p)
        with np.errstate(divide="ignore", invalid="ignore"):
            # Langevin function a (coth(a w) - 1 / (a w))
            big = p * (1 / np.tanh(x) - 1 / x)
        return np.where(small, f1 / f, big)

    def tilted_var(self, w) -> np.ndarray:
        w = self._check(w)
        p = self.param
        if self.variant == "gaussian":
            return np.full_like(w, p * p)
        if self.variant == "rademacher":
            return 1.0 / np.cosh(w) ** 2
        if self.variant == "laplace":
            return 2 * (p * p + w * w) / (p * p - w * w) ** 2
        x = p * w
        small = np.abs(x) < _SERIES_CUTOFF
        f, f1, f2, _ = _uniform_moment_integrals(np.where(small, w, 0.0), p)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            big = p * p * (1 / x**2 - 1 / np.sinh(x) ** 2)
        return np.where(small, f2 / f - (f1 / f) ** 2, big)

    def tilted_abs3(self, w) -> np.ndarray:
        """Third absolute central moment of ``xi`` under the tilt."""
        w = self._check(w)
        p = self.param
        if self.variant == "gaussian":
            return np.full_like(w, 2 * math.sqrt(2 / math.pi) * p**3)
        if self.variant == "rademacher":
            mu = np.tanh(w)
            up = special.expit(2 * w)
            return up * (1 - mu) ** 3 + (1 - up) * (1 + mu) ** 3
        if self.variant == "laplace":
            mu = self.tilted_mean(w)
            up = (p + w) / (2 * p)
            return up * _exp_abs3(p - w, mu) + (1 - up) * _exp_abs3(p + w, -mu)
        flat = np.atleast_1d(w)
        out = np.empty_like(flat)
        for i, wi in enumerate(flat):
            out[i] = self._uniform_abs3(float(wi))
        return out.reshape(np.shape(w))

    def _uniform_abs3(self, w: float) -> float:
        a = self.param
        mu = float(self.tilted_mean(np.array([w]))[0])
        logf = float(self.log_cgf(np.array([w]))[0])

        def dens(x):
            return math.exp(w * x - logf) / (2 * a)

        lo, _ = integrate.quad(lambda x: (mu - x) ** 3 * dens(x), -a, mu, epsabs=0, epsrel=1e-12)
        hi, _ = integrate.quad(lambda x: (x - mu) ** 3 * dens(x), mu, a, epsabs=0, epsrel=1e-12)
        return lo + hi


def sample_site(law: SceneryLaw, site, seed: int, replica: int = 0) -> float:
    """Value of the scenery at ``site`` in the environment ``(seed, replica)``."""
    coords = np.asarray(site, dtype=np.int64)
    if coords.shape[0] > rng.MAX_SITE_DIM:
        raise ValueError(f"sites limited to {rng.MAX_SITE_DIM} coordinates")
    k0, k1 = rng.key_words(seed, replica)
    return float(site_value(law.code, float(law.param), k0, k1, coords))


@nb.njit(cache=True)
def _site_values(code, param, k0, k1, sites):
    out = np.empty(sites.shape[0])
    for i in range(sites.shape[0]):
        out[i] = site_value(code, param, k0, k1, sites[i])
    return out


def site_values(law: SceneryLaw, sites: np.ndarray, seed: int, replica: int = 0) -> np.ndarray:
    k0, k1 = rng.key_words(seed, replica)
    return _site_values(law.code, float(law.param), k0, k1, np.ascontiguousarray(sites, dtype=np.int64))


def rwrs_value(field: LocalTimeField, law: SceneryLaw, seed: int, replica: int = 0,
               site_values_fn: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """``X_n = sum_z ell_n(z) xi(z)`` summed in packed-key site order.

    ``site_values_fn`` replaces the scenery by a deterministic stub (testing hook).
    """
    if field.n_sites == 0:
        raise ValueError("empty local-time field")
    xi = site_values_fn(field.sites) if site_values_fn is not None else site_values(law, field.sites, seed, replica)
    terms = field.counts * xi
    if field.n_sites > COMPENSATED_SITES:
        return math.fsum(terms.tolist())
    total = 0.0
    for t in terms.tolist():
        total += t
    return total


def rwrs_value_stepwise(path: WalkPath, law: SceneryLaw, seed: int, replica: int = 0) -> float:
    """``sum_k xi(S_k)`` in time order; reference for :func:`rwrs_value`."""
    xi = site_values(law, path.positions, seed, replica)
    total = 0.0
    for v in xi.tolist():
        total += v
    return total


def tilted_sample(law: SceneryLaw, weight, generator: np.random.Generator, size=None) -> np.ndarray:
    """Draws from the law reweighted by ``e^{weight * y} / f(weight)``."""
    w = np.asarray(weight, dtype=np.float64)
    if law.variant == "laplace" and np.any(w >= law.theta):
        raise TiltDomainError(f"tilt {np.max(w)} outside the domain (theta = {law.theta})")
    if law.variant == "laplace" and np.any(w <= -law.theta):
        raise TiltDomainError(f"tilt {np.min(w)} outside the domain (theta = {law.theta})")
    shape = np.broadcast_shapes(w.shape, () if size is None else tuple(np.atleast_1d(size)))
    w = np.broadcast_to(w, shape)
    p = law.param
    if law.variant == "gaussian":
        return p * p * w + p * generator.standard_normal(shape)
    u = generator.random(shape)
    if law.variant == "rademacher":
        return np.where(u < special.expit(2 * w), 1.0, -1.0)
    if law.variant == "laplace":
        v = generator.random(shape)
        up = v < (p + w) / (2 * p)
        rate = np.where(up, p - w, p + w)
        mag = -np.log1p(-u) / rate
        return np.where(up, mag, -mag)
    # truncated exponential on [-a, a] by inverse cdf, stable for either sign of w
    a = p
    aw = np.abs(a * w)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_pos = a + np.log(u + (1 - u) * np.exp(-2 * aw)) / np.abs(w)
    x = np.where(aw < 1e-12, a * (2 * u - 1), x_pos)
    return np.where(w < 0, -x, x)
