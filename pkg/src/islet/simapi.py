"""Black-box simulator contract: ``reset(seed)``, ``next()``, ``eval(name)``.

The estimation engine only ever talks to objects implementing
:class:`Simulator`; it never looks inside the model. Besides the island
model this module ships two small simulators used to test the engine: a
synthetic one whose observable is a fixed normal draw per run, and a
scripted one whose observables are deterministic functions of the step.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol

from . import model
from .model import HorizonError, ModelParams, UnknownObservableError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64_mix(z: int) -> int:
    """SplitMix64 output finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, run_index: int) -> int:
    """Seed of run ``run_index``: the ``run_index``-th SplitMix64 output for ``master``.

    Run 0 maps to the finalizer of ``master`` itself, so ``derive_seed(0, 0) == 0``.
    """
    return splitmix64_mix((master + run_index * GOLDEN_GAMMA) & MASK64)


class Simulator(Protocol):
    observables: tuple[str, ...]

    @property
    def step(self) -> int: ...

    @property
    def horizon(self) -> int: ...

    def reset(self, seed: int) -> "Simulator": ...

    def next(self) -> "Simulator": ...

    def eval(self, name: str) -> float: ...


class IslandSimulator:
    """Handle owning one island-model run."""

    observables = model.OBSERVABLES

    def __init__(self, params: ModelParams):
        self.params = params.validate()
        self.world: model.WorldState | None = None

    @property
    def step(self) -> int:
        return self._world().step

    @property
    def horizon(self) -> int:
        return self.params.horizon

    def reset(self, seed: int) -> "IslandSimulator":
        self.world = model.reset(self.params, seed)
        return self

    def next(self) -> "IslandSimulator":
        model.step(self._world())
        return self

    def eval(self, name: str) -> float:
        return model.eval_observable(self._world(), name)

    def _world(self) -> model.WorldState:
        if self.world is None:
            raise RuntimeError("simulator used before reset()")
        return self.world


@dataclass(frozen=True)
class IslandFactory:
    """Picklable factory of fresh island simulators (one per run)."""

    params: ModelParams

    def __call__(self) -> IslandSimulator:
        return IslandSimulator(self.params)


class SyntheticNormalSimulator:
    """Observable ``x`` ~ Normal(mean, sd), drawn once per run at reset."""

    observables = ("x", "steps")

    def __init__(self, mean: float = 0.0, sd: float = 1.0, horizon: int = 1):
        self.mean = mean
        self.sd = sd
        self._horizon = horizon
        self._step = 0
        self._x: float | None = None

    @property
    def step(self) -> int:
        return self._step

    @property
    def horizon(self) -> int:
        return self._horizon

    def reset(self, seed: int) -> "SyntheticNormalSimulator":
        self._step = 0
        self._x = random.Random(seed).gauss(self.mean, self.sd)
        return self

    def next(self) -> "SyntheticNormalSimulator":
        if self._step >= self._horizon:
            raise HorizonError(f"already at horizon {self._horizon}")
        self._step += 1
        return self

    def eval(self, name: str) -> float:
        if self._x is None:
            raise RuntimeError("simulator used before reset()")
        if name == "x":
            return self._x
        if name == "steps":
            return float(self._step)
        raise UnknownObservableError(f"unknown observable {name!r}")


@dataclass(frozen=True)
class SyntheticNormalFactory:
    mean: float = 0.0
    sd: float = 1.0
    horizon: int = 1

    def __call__(self) -> SyntheticNormalSimulator:
        return SyntheticNormalSimulator(self.mean, self.sd, self.horizon)


def _ten_steps(step: int) -> float:
    return 10.0 * step


def _steps(step: int) -> float:
    return float(step)


DEFAULT_SCRIPT: Mapping[str, Callable[[int], float]] = {
    "steps": _steps,
    "my_time": _steps,
    "logGDP": _ten_steps,
}


class ScriptedSimulator:
    """Deterministic simulator: each observable is a function of the step.

    The seed is accepted and ignored, so every run is identical. ``advances``
    counts calls to :meth:`next` since the last reset.
    """

    def __init__(self, script: Mapping[str, Callable[[int], float]] | None = None, horizon: int = 1000):
        self.script = dict(DEFAULT_SCRIPT if script is None else script)
        self.observables = tuple(self.script)
        self._horizon = horizon
        self._step = 0
        self.advances = 0

    @property
    def step(self) -> int:
        return self._step

    @property
    def horizon(self) -> int:
        return self._horizon

    def reset(self, seed: int) -> "ScriptedSimulator":
        self._step = 0
        self.advances = 0
        return self

    def next(self) -> "ScriptedSimulator":
        if self._step >= self._horizon:
            raise HorizonError(f"already at horizon {self._horizon}")
        self._step += 1
        self.advances += 1
        return self

    def eval(self, name: str) -> float:
        try:
            fn = self.script[name]
        except KeyError:
            raise UnknownObservableError(f"unknown observable {name!r}") from None
        return float(fn(self._step))


@dataclass(frozen=True)
class ScriptedFactory:
    horizon: int = 1000

    def __call__(self) -> ScriptedSimulator:
        return ScriptedSimulator(horizon=self.horizon)
