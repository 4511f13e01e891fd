"""Island Model of endogenous growth.

Technologies are cells of an unbounded integer lattice centred on the initial
island at (0, 0). Each cell hosts an island with probability
``island_density``; occupancy is sampled lazily the first time a cell is
visited and memoised for the rest of the run.

Agents are Miners (producing on a known island), Imitators (walking toward a
signalled island) or Explorers (random walk in search of new islands). One
call to :func:`step` advances the world through a fixed phase order:

1. scheduled parameter interventions
2. production and GDP bookkeeping
3. exploration draws (Miner -> Explorer)
4. signal reception (Miner -> Imitator)
5. movement
6. arrivals (Explorer -> Miner, Imitator -> Miner)

An agent's skills start at 1 and grow by everything it produces while
mining (learning by doing); they enter the productivity of any island the
agent later discovers.

All random draws come from the world's own generator and are consumed in
ascending agent id order within a phase, so a run is a pure function of its
parameters and seed.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from typing import NamedTuple

Position = tuple[int, int]

CENTER: Position = (0, 0)

# Cardinal moves, indexed by a uniform draw in range(4).
_MOVES: tuple[Position, ...] = ((1, 0), (-1, 0), (0, 1), (0, -1))


class ModelError(Exception):
    """Base class for errors raised by the island model."""


class ParameterError(ModelError, ValueError):
    """Invalid model parameter; ``field`` names the offending parameter."""

    def __init__(self, field_name: str, message: str):
        super().__init__(message)
        self.field = field_name


class HorizonError(ModelError):
    """Attempt to step a world that already reached its horizon."""


class ObservableError(ModelError):
    """Observable cannot be evaluated on the current state."""


class UnknownObservableError(ObservableError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class NonFiniteObservableError(ObservableError, ArithmeticError):
    pass


class AgentKind(IntEnum):
    MINER = 1
    IMITATOR = 2
    EXPLORER = 3


MINER = AgentKind.MINER
IMITATOR = AgentKind.IMITATOR
EXPLORER = AgentKind.EXPLORER


class Intervention(NamedTuple):
    """Replace ``param`` by ``value`` from step ``step`` onward."""

    step: int
    param: str
    value: float


# Parameters that an intervention may change mid-run.
INTERVENABLE = (
    "island_density",
    "returns_to_scale",
    "exploration_prob",
    "breakthrough_rate",
    "skill_weight",
    "signal_decay",
)


@dataclass(frozen=True)
class ModelParams:
    n_agents: int = 20
    horizon: int = 201
    island_density: float = 0.1
    returns_to_scale: float = 1.5
    exploration_prob: float = 0.1
    breakthrough_rate: float = 1.0
    skill_weight: float = 0.5
    signal_decay: float = 0.1
    interventions: tuple[Intervention, ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self,
            "interventions",
            tuple(Intervention(int(s), str(p), float(v)) for s, p, v in self.interventions),
        )

    def validate(self) -> "ModelParams":
        _check_count("n_agents", self.n_agents, 1)
        _check_count("horizon", self.horizon, 1)
        for name in INTERVENABLE:
            _check_value(name, getattr(self, name))
        for iv in self.interventions:
            if iv.param not in INTERVENABLE:
                raise ParameterError(
                    "interventions", f"interventions: unknown parameter {iv.param!r}"
                )
            if not 0 <= iv.step <= self.horizon:
                raise ParameterError(
                    "interventions",
                    f"interventions: step {iv.step} outside [0, {self.horizon}]",
                )
            _check_value(iv.param, iv.value)
        return self

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["interventions"] = [
            {"step": iv.step, "param": iv.param, "value": iv.value} for iv in self.interventions
        ]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(unknown[0], f"unknown model parameter {unknown[0]!r}")
        kwargs = dict(data)
        if "interventions" in kwargs:
            ivs = []
            for item in kwargs["interventions"] or ():
                if isinstance(item, dict):
                    extra = set(item) - {"step", "param", "value"}
                    if extra or len(item) != 3:
                        raise ParameterError(
                            "interventions", "interventions: entries need step, param, value"
                        )
                    item = (item["step"], item["param"], item["value"])
                ivs.append(item)
            kwargs["interventions"] = ivs
        for name in ("n_agents", "horizon"):
            if name in kwargs:
                kwargs[name] = _as_int(name, kwargs[name])
        for name in INTERVENABLE:
            if name in kwargs:
                kwargs[name] = parse_real(name, kwargs[name])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ParameterError("interventions", f"interventions: {exc}") from exc

    def with_value(self, name: str, value) -> "ModelParams":
        """Copy with one parameter replaced (used by sweeps)."""
        return ModelParams.from_dict({**self.as_dict(), name: value})


def parse_real(name: str, value) -> float:
    """Parse a numeric parameter: decimal point, optional exponent, no locale."""
    if isinstance(value, bool):
        raise ParameterError(name, f"{name}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        text = value.strip()
        try:
            return float(text)
        except ValueError:
            pass
    raise ParameterError(name, f"{name}: expected a number, got {value!r}")


def _as_int(name: str, value) -> int:
    if isinstance(value, bool):
        raise ParameterError(name, f"{name}: expected an integer, got {value!r}")
    if isinstance(value, int):
        return value
    num = parse_real(name, value)
    if not num.is_integer():
        raise ParameterError(name, f"{name}: expected an integer, got {value!r}")
    return int(num)


def _check_count(name: str, value: int, low: int) -> None:
    if not isinstance(value, int) or value < low:
        raise ParameterError(name, f"{name} must be an integer >= {low}, got {value!r}")


_UNIT_INTERVAL = ("island_density", "exploration_prob")
_NON_NEGATIVE = ("signal_decay", "breakthrough_rate", "skill_weight")


def _check_value(name: str, value: float) -> None:
    if not isinstance(value, (int, float)) or math.isnan(value):
        raise ParameterError(name, f"{name} must be a number, got {value!r}")
    if name in _UNIT_INTERVAL and not 0.0 <= value <= 1.0:
        raise ParameterError(name, f"{name} out of [0,1]")
    if name in _NON_NEGATIVE and not (0.0 <= value < math.inf):
        raise ParameterError(name, f"{name} must be finite and >= 0")
    if name == "returns_to_scale" and not (0.0 < value < math.inf):
        raise ParameterError(name, f"{name} must be finite and > 0")


class ModelRng(random.Random):
    """Mersenne Twister with the two extra samplers the model needs."""

    def poisson(self, lam: float) -> int:
        # inversion by sequential search; fine for the small rates used here
        if lam <= 0.0:
            return 0
        u = self.random()
        k = 0
        p = math.exp(-lam)
        cdf = p
        while u > cdf and p > 0.0:
            k += 1
            p *= lam / k
            cdf += p
        return k

    def normal(self) -> float:
        return self.gauss(0.0, 1.0)


class LatticeOracle:
    """Lazily sampled island occupancy; each cell is drawn at most once."""

    def __init__(self, rng: random.Random, density: float):
        self.rng = rng
        self.density = density
        self.memo: dict[Position, bool] = {CENTER: True}

    def occupied(self, cell: Position) -> bool:
        hit = self.memo.get(cell)
        if hit is None:
            hit = self.rng.random() < self.density
            self.memo[cell] = hit
        return hit


@dataclass(slots=True)
class Agent:
    id: int
    kind: AgentKind
    x: int
    y: int
    production: float = 0.0
    past_skills: float = 1.0
    destination: Position | None = None

    @property
    def position(self) -> Position:
        return (self.x, self.y)


@dataclass(slots=True)
class Island:
    position: Position
    productivity: float
    discovered_at: int
    discoverer: int


@dataclass
class WorldState:
    params: ModelParams
    step: int
    agents: list[Agent]
    islands: dict[Position, Island]
    lattice: LatticeOracle
    rng: ModelRng
    gdp_series: list[float] = field(default_factory=list)
    # values currently in force, after interventions
    current: ModelParams | None = None

    def count(self, kind: AgentKind) -> int:
        return sum(1 for a in self.agents if a.kind is kind)


def reset(params: ModelParams, seed: int) -> WorldState:
    params.validate()
    rng = ModelRng(seed)
    current = _apply_interventions(params, params, 0)
    agents = [Agent(i, AgentKind.MINER, 0, 0) for i in range(params.n_agents)]
    islands = {CENTER: Island(CENTER, 1.0, 0, -1)}
    return WorldState(
        params=params,
        step=0,
        agents=agents,
        islands=islands,
        lattice=LatticeOracle(rng, current.island_density),
        rng=rng,
        current=current,
    )


def _apply_interventions(base: ModelParams, current: ModelParams, step: int) -> ModelParams:
    changes = {iv.param: iv.value for iv in base.interventions if iv.step == step}
    return replace(current, **changes) if changes else current


def manhattan(a: Position, b: Position) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def island_productivity(
    position: Position, discoverer_skills: float, params: ModelParams, rng
) -> float:
    """Productivity of a freshly discovered island, clamped at zero."""
    breakthroughs = rng.poisson(params.breakthrough_rate)
    noise = rng.normal()
    distance = abs(position[0]) + abs(position[1])
    value = (1 + breakthroughs) * (distance + params.skill_weight * discoverer_skills + noise)
    return max(0.0, value)


def miner_production(productivity: float, miner_count: int, params: ModelParams) -> float:
    """Per-miner output on an island worked by ``miner_count`` miners."""
    if miner_count < 1:
        raise ValueError("miner_count must be >= 1")
    return productivity * miner_count ** (params.returns_to_scale - 1.0)


def signal_probability(
    source_island_miners: int, total_miners: int, distance: float, params: ModelParams
) -> float:
    """Chance that a given miner on the source island signals the receiver."""
    if total_miners < 1:
        raise ValueError("no miners, no signals")
    return (source_island_miners / total_miners) * math.exp(-params.signal_decay * distance)


def step(world: WorldState, params: ModelParams | None = None) -> WorldState:
    """Advance ``world`` in place by one step and return it."""
    base = world.params if params is None else params
    if world.step >= base.horizon:
        raise HorizonError(f"world already at horizon {base.horizon}")
    t = world.step + 1
    cur = _apply_interventions(base, world.current or base, t)
    world.current = cur
    world.lattice.density = cur.island_density
    rng = world.rng
    agents = world.agents

    # production
    crowd: dict[Position, int] = {}
    lowest_id: dict[Position, int] = {}
    for a in agents:
        if a.kind is MINER:
            pos = (a.x, a.y)
            if pos in crowd:
                crowd[pos] += 1
            else:
                crowd[pos] = 1
                lowest_id[pos] = a.id
    islands = world.islands
    per_miner = {pos: miner_production(islands[pos].productivity, m, cur) for pos, m in crowd.items()}
    gdp = 0.0
    for a in agents:
        if a.kind is MINER:
            y = per_miner[(a.x, a.y)]
            a.production = y
            a.past_skills += y
            gdp += y
        else:
            a.production = 0.0
    world.gdp_series.append(gdp)

    # exploration
    eps = cur.exploration_prob
    stayers = []
    for a in agents:
        if a.kind is MINER:
            if rng.random() < eps:
                a.kind = EXPLORER
                a.production = 0.0
            else:
                stayers.append(a)

    # imitation; senders are the miners that produced this step
    if stayers and len(crowd) > 1:
        total = sum(crowd.values())
        offers: dict[Position, list[tuple[float, Position]]] = {}
        for a in stayers:
            here = (a.x, a.y)
            if here not in offers:
                offers[here] = _ranked_offers(here, crowd, per_miner, lowest_id, total, cur)
            own = per_miner[here]
            for p_hit, target in offers[here]:
                if per_miner[target] <= own:
                    break
                if rng.random() < p_hit:
                    a.kind = IMITATOR
                    a.destination = target
                    a.production = 0.0
                    break

    # movement
    for a in agents:
        if a.kind is EXPLORER:
            dx, dy = _MOVES[int(rng.random() * 4.0)]
            a.x += dx
            a.y += dy
        elif a.kind is IMITATOR:
            tx, ty = a.destination
            if a.x != tx:
                a.x += 1 if tx > a.x else -1
            else:
                a.y += 1 if ty > a.y else -1

    # arrivals
    occupied = world.lattice.occupied
    for a in agents:
        if a.kind is EXPLORER:
            pos = (a.x, a.y)
            if occupied(pos):
                a.kind = MINER
                if pos not in islands:
                    s = island_productivity(pos, a.past_skills, cur, rng)
                    islands[pos] = Island(pos, s, t, a.id)
        elif a.kind is IMITATOR and (a.x, a.y) == a.destination:
            a.kind = MINER
            a.destination = None

    world.step = t
    return world


def _ranked_offers(here, crowd, per_miner, lowest_id, total, params):
    """Other mined islands, best first, with the chance each one gets through.

    An island with m miners signals a receiver unless all m of its miners
    fail independently, so the per-island hit probability is
    1 - (1 - w)^m with w the per-miner signal probability.
    """
    ranked = []
    for pos, m in crowd.items():
        if pos == here:
            continue
        d = manhattan(here, pos)
        w = signal_probability(m, total, d, params)
        p_hit = 1.0 - (1.0 - w) ** m
        ranked.append((-per_miner[pos], d, lowest_id[pos], p_hit, pos))
    ranked.sort()
    return [(r[3], r[4]) for r in ranked]


OBSERVABLES = (
    "GDP",
    "logGDP",
    "AGR",
    "AGR_total",
    "steps",
    "my_time",
    "n_miners",
    "n_imitators",
    "n_explorers",
    "n_islands",
)


def eval_observable(world: WorldState, name: str) -> float:
    gdp = world.gdp_series
    if name in ("steps", "my_time"):
        return float(world.step)
    if name == "n_miners":
        return float(world.count(AgentKind.MINER))
    if name == "n_imitators":
        return float(world.count(AgentKind.IMITATOR))
    if name == "n_explorers":
        return float(world.count(AgentKind.EXPLORER))
    if name == "n_islands":
        return float(len(world.islands))
    if name not in OBSERVABLES:
        raise UnknownObservableError(f"unknown observable {name!r}")
    if not gdp:
        raise ObservableError(f"{name} needs at least one completed step")
    if name == "GDP":
        return gdp[-1]
    if name == "logGDP":
        return _log(gdp[-1], name)
    if name == "AGR":
        if len(gdp) < 2:
            raise ObservableError("AGR needs at least two completed steps")
        return gdp[-1] - gdp[-2]
    # AGR_total over the productive span: first to last step with positive
    # GDP (a step where every agent happens to be off-island has GDP 0)
    start = next((k for k, g in enumerate(gdp) if g > 0.0), None)
    if start is None:
        raise NonFiniteObservableError("AGR_total: GDP never positive")
    end = len(gdp) - 1
    while not gdp[end] > 0.0:
        end -= 1
    return (math.log(gdp[end]) - math.log(gdp[start])) / (end - start + 1)


def _log(value: float, name: str) -> float:
    if not value > 0.0:
        raise NonFiniteObservableError(f"{name}: log of non-positive GDP {value!r}")
    return math.log(value)
