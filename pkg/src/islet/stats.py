"""Running moments and the Student-t distribution, in pure Python.

The t CDF goes through the regularized incomplete beta function, evaluated
with the modified Lentz continued fraction. Quantiles invert the CDF by
safeguarded Newton iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from statistics import NormalDist

_STD_NORMAL = NormalDist()


class InsufficientDataError(ValueError):
    pass


class PoisonedAccumulatorError(ArithmeticError):
    """A non-finite sample reached an accumulator."""

    def __init__(self, value: float, run_index: int | None = None):
        where = "" if run_index is None else f" from run {run_index}"
        super().__init__(f"non-finite sample {value!r}{where}")
        self.value = value
        self.run_index = run_index


@dataclass
class Accumulator:
    """Welford accumulator for count, mean and sum of squared deviations."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, x: float, run_index: int | None = None) -> "Accumulator":
        if not math.isfinite(x):
            raise PoisonedAccumulatorError(x, run_index)
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)
        return self

    def merge(self, other: "Accumulator") -> "Accumulator":
        """Combine two disjoint samples (Chan et al. pairwise update)."""
        if other.n == 0:
            return Accumulator(self.n, self.mean, self.m2)
        if self.n == 0:
            return Accumulator(other.n, other.mean, other.m2)
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return Accumulator(n, mean, m2)

    @property
    def variance(self) -> float:
        if self.n < 2:
            raise InsufficientDataError("variance needs at least two samples")
        return self.m2 / (self.n - 1)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_quantile(p: float) -> float:
    return _STD_NORMAL.inv_cdf(p)


def _betacf(a: float, b: float, x: float) -> float:
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 100_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError(f"incomplete beta did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _check_df(df: float) -> None:
    if not df >= 1.0:
        raise ValueError(f"degrees of freedom must be >= 1, got {df!r}")


def t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t) of Student's t with ``df`` degrees of freedom."""
    _check_df(df)
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    t2 = t * t
    if t2 < df:
        # central mass P(|T| < |t|) stays accurate near the median
        central = betainc(0.5, 0.5 * df, t2 / (df + t2))
        return 0.5 - 0.5 * central if t > 0 else 0.5 + 0.5 * central
    half_tail = 0.5 * betainc(0.5 * df, 0.5, df / (df + t2))
    return half_tail if t > 0 else 1.0 - half_tail


def t_cdf(t: float, df: float) -> float:
    return t_sf(-t, df)


def t_pdf(t: float, df: float) -> float:
    log_c = math.lgamma(0.5 * (df + 1)) - math.lgamma(0.5 * df) - 0.5 * math.log(df * math.pi)
    return math.exp(log_c - 0.5 * (df + 1) * math.log1p(t * t / df))


@lru_cache(maxsize=4096)
def t_quantile(p: float, df: float) -> float:
    """Inverse CDF of Student's t (absolute accuracy well below 1e-6)."""
    _check_df(df)
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, df)
    # bracket [lo, hi] on the positive axis, then Newton with bisection fallback
    lo, hi = 0.0, max(1.0, normal_quantile(p))
    while t_cdf(hi, df) < p:
        lo, hi = hi, 2.0 * hi
    x = 0.5 * (lo + hi)
    for _ in range(200):
        f = t_cdf(x, df) - p
        if f > 0:
            hi = x
        else:
            lo = x
        step = f / t_pdf(x, df)
        nxt = x - step
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - x) <= 1e-12 * max(1.0, abs(x)):
            return nxt
        x = nxt
    return x
