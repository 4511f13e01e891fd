"""Welch's two-sample t-test per instance, with post-hoc power."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .stats import normal_cdf, normal_quantile, t_sf


class NoVariationError(ValueError):
    """Both groups are constant and equal, so the test is undefined."""


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SampleSummary:
    mean: float
    variance: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("a sample summary needs n >= 2")
        if self.variance < 0:
            raise ValueError("variance must be >= 0")


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float
    reject: bool
    degenerate: bool = False


def _standard_error(a: SampleSummary, b: SampleSummary) -> tuple[float, float, float]:
    va = a.variance / a.n
    vb = b.variance / b.n
    return va, vb, math.sqrt(va + vb)


def welch_test(a: SampleSummary, b: SampleSummary, confidence_alpha: float = 0.05) -> WelchResult:
    """Two-sided Welch test of equal means."""
    va, vb, se = _standard_error(a, b)
    diff = a.mean - b.mean
    if se == 0.0:
        if diff == 0.0:
            raise NoVariationError("both groups are constant with equal means")
        # constant but different groups: reject by convention
        return WelchResult(math.copysign(math.inf, diff), float(a.n + b.n - 2), 0.0, True, True)
    t = diff / se
    df = (va + vb) ** 2 / (va * va / (a.n - 1) + vb * vb / (b.n - 1))
    p = min(1.0, 2.0 * t_sf(abs(t), df))
    return WelchResult(t, df, p, p < confidence_alpha)


def power(a: SampleSummary, b: SampleSummary, confidence_alpha: float = 0.05) -> float:
    """Normal-approximation power, taking the observed difference as the truth."""
    _, _, se = _standard_error(a, b)
    diff = abs(a.mean - b.mean)
    if se == 0.0:
        if diff == 0.0:
            raise NoVariationError("both groups are constant with equal means")
        return 1.0
    z = normal_quantile(1.0 - confidence_alpha / 2.0)
    shift = diff / se
    return normal_cdf(shift - z) + normal_cdf(-shift - z)


@dataclass(frozen=True)
class Comparison:
    instance: str
    mean_a: float
    mean_b: float
    t: float
    df: float
    p: float
    reject: bool
    power: float
    degenerate: bool = False

    @property
    def marker(self) -> str:
        """Plot glyph: a dot for equal means, a cross for different means."""
        return "×" if self.reject else "•"


def summary_of(est) -> SampleSummary:
    return SampleSummary(est.mean, est.variance, est.n)


def compare_series(results_a: Sequence, results_b: Sequence, confidence_alpha: float = 0.05) -> list[Comparison]:
    """Instance-by-instance Welch tests between two estimations.

    Instances where both groups are constant and equal cannot be tested; they
    are reported as non-rejections with p = 1, t = 0 and ``degenerate`` set.
    """
    labels_a = [e.instance for e in results_a]
    labels_b = [e.instance for e in results_b]
    if labels_a != labels_b:
        raise GridMismatchError(f"instance grids differ: {labels_a} vs {labels_b}")
    out = []
    for ea, eb in zip(results_a, results_b):
        a, b = summary_of(ea), summary_of(eb)
        try:
            w = welch_test(a, b, confidence_alpha)
            pw = power(a, b, confidence_alpha)
        except NoVariationError:
            out.append(
                Comparison(ea.instance, a.mean, b.mean, 0.0, math.nan, 1.0, False,
                           confidence_alpha, True)
            )
            continue
        out.append(Comparison(ea.instance, a.mean, b.mean, w.t, w.df, w.p, w.reject, pw, w.degenerate))
    return out
