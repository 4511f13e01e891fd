"""Experiment configuration files (YAML) and their validation."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .model import INTERVENABLE, ModelParams, ParameterError, parse_real
from .smc import SettingsError, SmcSettings

SECTIONS = ("model", "smc", "query", "sweep", "compare", "output")
SWEEPABLE = ("n_agents",) + INTERVENABLE


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Sweep:
    param: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelParams = field(default_factory=ModelParams)
    smc: SmcSettings = field(default_factory=SmcSettings)
    query: str | None = None
    sweep: Sweep | None = None
    compare: tuple[tuple[float, float], ...] = ()
    output_dir: str = "out"
    # directory relative paths are resolved against; not serialized
    base_dir: Path = field(default=Path("."), compare=False)
    # model keys that were filled in from the defaults
    defaults_applied: tuple[str, ...] = field(default=(), compare=False)

    def query_path(self) -> Path:
        if self.query is None:
            raise ConfigError("query: no query file configured")
        return self.base_dir / self.query

    def query_text(self) -> str:
        try:
            return self.query_path().read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"query: cannot read {self.query_path()}: {exc}") from exc

    def out_dir(self) -> Path:
        return self.base_dir / self.output_dir

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None:
            return self
        smc = SmcSettings(**{**self.smc.as_dict(), "master_seed": seed})
        return replace(self, smc=_checked_smc(smc))

    def with_output(self, out: str | None) -> "ExperimentConfig":
        if out is None:
            return self
        return replace(self, output_dir=str(Path(out).resolve()))

    def as_dict(self) -> dict:
        d: dict = {"model": self.model.as_dict(), "smc": self.smc.as_dict()}
        if self.query is not None:
            d["query"] = self.query
        if self.sweep is not None:
            d["sweep"] = {"param": self.sweep.param, "values": list(self.sweep.values)}
        if self.compare:
            d["compare"] = [list(p) for p in self.compare]
        d["output"] = {"dir": self.output_dir}
        return d


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.as_dict(), sort_keys=False)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return config_from_dict(data or {}, base_dir=path.parent)


def config_from_dict(data: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"config: unknown section {unknown[0]!r}")

    model_data = _section(data, "model")
    try:
        model = ModelParams.from_dict(model_data).validate()
    except ParameterError as exc:
        raise ConfigError(f"model.{exc.field}: {exc}") from exc
    defaults = tuple(k for k in ModelParams().as_dict() if k not in model_data)

    smc_data = _section(data, "smc")
    known = set(SmcSettings().as_dict())
    extra = sorted(set(smc_data) - known)
    if extra:
        raise ConfigError(f"smc.{extra[0]}: unknown key")
    kwargs = {}
    for k, v in smc_data.items():
        if k in ("confidence_alpha", "ci_width_threshold"):
            try:
                kwargs[k] = parse_real(k, v)
            except ParameterError as exc:
                raise ConfigError(f"smc.{k}: {exc}") from exc
        else:
            kwargs[k] = _int_value(f"smc.{k}", v)
    smc = _checked_smc(SmcSettings(**kwargs))

    query = data.get("query")
    if query is not None and not isinstance(query, str):
        raise ConfigError("query: expected a file path")

    sweep = None
    if data.get("sweep") is not None:
        sweep = _parse_sweep(_section(data, "sweep"))
        for v in sweep.values:
            try:
                model.with_value(sweep.param, v).validate()
            except ParameterError as exc:
                raise ConfigError(f"sweep.values: {exc}") from exc

    compare = ()
    if data.get("compare") is not None:
        raw = data["compare"]
        if not isinstance(raw, list):
            raise ConfigError("compare: expected a list of value pairs")
        pairs = []
        for item in raw:
            if not isinstance(item, (list, tuple)) or len(item) != 2:
                raise ConfigError(f"compare: {item!r} is not a pair")
            try:
                pairs.append(tuple(parse_real("compare", v) for v in item))
            except ParameterError as exc:
                raise ConfigError(f"compare: {exc}") from exc
        compare = tuple(pairs)

    out = _section(data, "output")
    extra = sorted(set(out) - {"dir"})
    if extra:
        raise ConfigError(f"output.{extra[0]}: unknown key")
    output_dir = out.get("dir", "out")
    if not isinstance(output_dir, str):
        raise ConfigError("output.dir: expected a path")

    return ExperimentConfig(model, smc, query, sweep, compare, output_dir, base_dir, defaults)


def _section(data: dict, name: str) -> dict:
    sec = data.get(name)
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected a mapping")
    return sec


def _int_value(where: str, v) -> int:
    if isinstance(v, bool):
        raise ConfigError(f"{where}: expected an integer")
    if isinstance(v, int):
        return v
    if isinstance(v, str):
        try:
            return int(v.strip())
        except ValueError:
            pass
    if isinstance(v, float) and v.is_integer():
        return int(v)
    raise ConfigError(f"{where}: expected an integer, got {v!r}")


def _checked_smc(smc: SmcSettings) -> SmcSettings:
    try:
        return smc.validate()
    except SettingsError as exc:
        raise ConfigError(f"smc.{exc.field}: {exc}") from exc


def _parse_sweep(sec: dict) -> Sweep:
    extra = sorted(set(sec) - {"param", "values"})
    if extra:
        raise ConfigError(f"sweep.{extra[0]}: unknown key")
    param = sec.get("param")
    if param not in SWEEPABLE:
        raise ConfigError(f"sweep.param: {param!r} is not a sweepable model parameter")
    values = sec.get("values")
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep.values: expected a non-empty list")
    try:
        parsed = tuple(parse_real("sweep.values", v) for v in values)
    except ParameterError as exc:
        raise ConfigError(f"sweep.values: {exc}") from exc
    if len(set(parsed)) != len(parsed):
        raise ConfigError("sweep.values: values must be distinct")
    if any(not math.isfinite(v) for v in parsed):
        raise ConfigError("sweep.values: values must be finite")
    return Sweep(param, parsed)


def format_value(v: float) -> str:
    """Compact, filename-safe rendering of a sweep value."""
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def config_hash(model: ModelParams, smc: SmcSettings, query_text: str) -> str:
    blob = json.dumps(
        {"model": model.as_dict(), "smc": smc.as_dict(), "query": query_text},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
