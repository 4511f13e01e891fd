"""Adaptive Monte Carlo estimation of query expectations.

Runs are simulated in blocks. After every block each instance gets a
Student-t confidence interval, and sampling stops once every interval is at
most ``ci_width_threshold`` wide or ``max_runs`` is reached.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import Executor
from dataclasses import dataclass, field, fields
from typing import Callable

from . import quatex
from .simapi import derive_seed
from .stats import Accumulator, InsufficientDataError, PoisonedAccumulatorError, t_quantile

log = logging.getLogger(__name__)


class SettingsError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(message)
        self.field = field_name


class EstimationError(RuntimeError):
    """A run failed; the estimate is aborted rather than silently biased."""

    def __init__(self, message: str, run_index: int, instance: str | None = None):
        super().__init__(message)
        self.run_index = run_index
        self.instance = instance


class NonConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SmcSettings:
    confidence_alpha: float = 0.05
    ci_width_threshold: float = 1.0
    block_size: int = 30
    max_runs: int = 10_000
    master_seed: int = 0

    def validate(self) -> "SmcSettings":
        if not 0.0 < self.confidence_alpha < 1.0:
            raise SettingsError("confidence_alpha", "confidence_alpha must lie in (0, 1)")
        if not self.ci_width_threshold > 0.0:
            raise SettingsError("ci_width_threshold", "ci_width_threshold must be > 0")
        if not isinstance(self.block_size, int) or self.block_size < 2:
            raise SettingsError("block_size", "block_size must be an integer >= 2")
        if not isinstance(self.max_runs, int) or self.max_runs < self.block_size:
            raise SettingsError("max_runs", "max_runs must be an integer >= block_size")
        if not isinstance(self.master_seed, int) or not 0 <= self.master_seed < 2**64:
            raise SettingsError("master_seed", "master_seed must be an unsigned 64-bit integer")
        return self

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def ci_halfwidth(acc: Accumulator, confidence_alpha: float) -> float:
    if acc.n < 2:
        raise InsufficientDataError("a confidence interval needs at least two runs")
    var = acc.variance
    if var <= 0.0:
        return 0.0
    return t_quantile(1.0 - confidence_alpha / 2.0, acc.n - 1) * math.sqrt(var / acc.n)


@dataclass
class InstanceEstimate:
    instance: str
    binding: float | None
    mean: float
    variance: float
    n: int
    ci_halfwidth: float
    converged: bool


@dataclass
class EstimationResult:
    instances: list[InstanceEstimate]
    # samples[i][k]: value of instance k in run i (runs in index order)
    samples: list[list[float]] = field(repr=False)
    settings: SmcSettings = field(default_factory=SmcSettings)

    @property
    def runs(self) -> int:
        return len(self.samples)

    @property
    def converged(self) -> bool:
        return all(e.converged for e in self.instances)


def run_once(sim_factory: Callable, query: quatex.QuerySpec, seed: int) -> list[float]:
    sim = sim_factory()
    sim.reset(seed)
    return quatex.evaluate(query, sim)


class _Job:
    """Picklable unit of work: evaluate the query on one seeded run."""

    def __init__(self, sim_factory, query, master_seed):
        self.sim_factory = sim_factory
        self.query = query
        self.master_seed = master_seed

    def __call__(self, run_index: int):
        try:
            return run_once(self.sim_factory, self.query, derive_seed(self.master_seed, run_index))
        except quatex.QueryEvaluationError as exc:
            label = exc.instance.label if exc.instance is not None else None
            return EstimationError(f"run {run_index}: {exc}", run_index, label)


def estimate(
    sim_factory: Callable,
    query: quatex.QuerySpec,
    settings: SmcSettings,
    executor: Executor | None = None,
) -> EstimationResult:
    """Estimate every instance of ``query`` to the requested CI width.

    ``sim_factory()`` must return a fresh simulator. Run ``i`` is seeded with
    ``derive_seed(settings.master_seed, i)``. Runs of a block may be spread
    over ``executor``; results are folded in run-index order so the outcome
    does not depend on scheduling.
    """
    settings.validate()
    insts = query.instances()
    accs = [Accumulator() for _ in insts]
    samples: list[list[float]] = []
    job = _Job(sim_factory, query, settings.master_seed)
    width = settings.ci_width_threshold
    halfwidths = [math.inf] * len(insts)

    while len(samples) < settings.max_runs:
        first = len(samples)
        size = min(settings.block_size, settings.max_runs - first)
        indices = range(first, first + size)
        if executor is None:
            outputs = map(job, indices)
        else:
            outputs = executor.map(job, indices)
        for run_index, values in zip(indices, outputs):
            if isinstance(values, EstimationError):
                raise values
            for k, (acc, v) in enumerate(zip(accs, values)):
                try:
                    acc.update(v, run_index)
                except PoisonedAccumulatorError as exc:
                    raise EstimationError(
                        f"run {run_index}, instance {insts[k].label}: {exc}",
                        run_index,
                        insts[k].label,
                    ) from exc
            samples.append(values)
        halfwidths = [ci_halfwidth(acc, settings.confidence_alpha) for acc in accs]
        log.debug("after %d runs: widest CI %.4g", len(samples), 2 * max(halfwidths))
        if all(2.0 * hw <= width for hw in halfwidths):
            break

    results = [
        InstanceEstimate(
            instance=inst.label,
            binding=inst.value,
            mean=acc.mean,
            variance=acc.variance,
            n=acc.n,
            ci_halfwidth=hw,
            converged=2.0 * hw <= width,
        )
        for inst, acc, hw in zip(insts, accs, halfwidths)
    ]
    missed = [r.instance for r in results if not r.converged]
    if missed:
        warnings.warn(
            f"{len(missed)} instance(s) did not reach CI width {width} within "
            f"{settings.max_runs} runs: {', '.join(missed)}",
            NonConvergenceWarning,
            stacklevel=2,
        )
    return EstimationResult(results, samples, settings)
