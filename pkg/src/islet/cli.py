"""``islet`` command line: simulate, estimate, sweep, compare, plot.

Exit codes: 0 success, 2 configuration error, 3 runtime failure,
4 I/O or missing-input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import csvio, plot, quatex
from .config import ConfigError, ExperimentConfig, config_hash, format_value, load_config
from .csvio import CsvFormatError
from .hyptest import compare_series
from .model import ModelParams, ParameterError
from .simapi import IslandFactory, IslandSimulator
from .smc import EstimationError, EstimationResult, InstanceEstimate, NonConvergenceWarning, ci_halfwidth, estimate
from .stats import Accumulator

log = logging.getLogger("islet")

MANIFEST = "manifest.json"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4


class DependencyError(RuntimeError):
    """A comparison needs estimation output that does not exist."""


# --------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    config: dict = field(default_factory=dict)
    defaults_applied: list = field(default_factory=list)
    master_seed: int = 0
    files: list = field(default_factory=list)
    estimations: dict = field(default_factory=dict)
    comparisons: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    warnings: int = 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    @classmethod
    def open(cls, out: Path, cfg: ExperimentConfig) -> "RunManifest":
        path = out / MANIFEST
        m = cls.from_json(path.read_text(encoding="utf-8")) if path.exists() else cls()
        m.config = cfg.as_dict()
        m.defaults_applied = list(cfg.defaults_applied)
        m.master_seed = cfg.smc.master_seed
        return m

    def add_file(self, out: Path, path: Path) -> str:
        rel = path.relative_to(out).as_posix()
        if rel not in self.files:
            self.files.append(rel)
            self.files.sort()
        return rel

    def save(self, out: Path) -> Path:
        self.add_file(out, out / MANIFEST)
        self.warnings = sum(len(e["nonconverged"]) for e in self.estimations.values())
        path = out / MANIFEST
        path.write_text(self.to_json(), encoding="utf-8")
        return path


# --------------------------------------------------------------------------
# commands


@contextmanager
def _executor(threads: int):
    if threads <= 1:
        yield None
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            yield ex


def _parse_query(cfg: ExperimentConfig) -> tuple[str, quatex.QuerySpec]:
    text = cfg.query_text()
    try:
        return text, quatex.parse(text)
    except quatex.QuatexError as exc:
        raise ConfigError(f"query {cfg.query}: {exc}") from exc


def cmd_simulate(cfg: ExperimentConfig, seed: int | None = None) -> Path:
    """One run of the model, written as a per-step trace."""
    seed = cfg.smc.master_seed if seed is None else seed
    out = cfg.out_dir()
    sim = IslandSimulator(cfg.model).reset(seed)
    rows = []
    for _ in range(cfg.model.horizon):
        sim.next()
        gdp = sim.eval("GDP")
        rows.append((
            sim.step,
            gdp,
            sim.eval("logGDP") if gdp > 0 else float("-inf"),
            int(sim.eval("n_miners")),
            int(sim.eval("n_imitators")),
            int(sim.eval("n_explorers")),
            int(sim.eval("n_islands")),
        ))
    path = csvio.write(out / f"trace_{seed}.csv", csvio.TRACE_HEADER, rows)
    manifest = RunManifest.open(out, cfg)
    manifest.add_file(out, path)
    manifest.save(out)
    return path


def _estimate_one(
    model: ModelParams,
    cfg: ExperimentConfig,
    query: quatex.QuerySpec,
    query_text: str,
    out: Path,
    name: str,
    manifest: RunManifest,
    threads: int,
    sim_factory: Callable | None,
    key: str,
    param_value: float | None = None,
) -> EstimationResult:
    factory = sim_factory or IslandFactory(model)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        with _executor(threads) as ex:
            result = estimate(factory, query, cfg.smc, executor=ex)
    est_path = csvio.write(out / f"{name}.csv", csvio.ESTIMATE_HEADER, csvio.estimate_rows(result.instances))
    labels = [e.instance for e in result.instances]
    digest = config_hash(model, cfg.smc, query_text)
    smp_path = csvio.write(out / f"samples_{digest}.csv", csvio.SAMPLES_HEADER, csvio.sample_rows(labels, result.samples))
    nonconv = [e.instance for e in result.instances if not e.converged]
    if nonconv:
        log.warning("%s: %d instance(s) did not converge", key, len(nonconv))
    manifest.estimations[key] = {
        "param_value": param_value,
        "estimate": manifest.add_file(out, est_path),
        "samples": manifest.add_file(out, smp_path),
        "runs": result.runs,
        "converged": not nonconv,
        "nonconverged": nonconv,
    }
    manifest.failures.pop(key, None)
    return result


def cmd_estimate(cfg: ExperimentConfig, threads: int = 1, sim_factory: Callable | None = None) -> EstimationResult:
    text, query = _parse_query(cfg)
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.open(out, cfg)
    try:
        return _estimate_one(cfg.model, cfg, query, text, out, "estimate", manifest, threads, sim_factory, "estimate")
    finally:
        manifest.save(out)


def _sweep_key(param: str, value: float) -> str:
    return f"{param}={format_value(value)}"


def cmd_sweep(cfg: ExperimentConfig, threads: int = 1) -> dict[float, EstimationResult | Exception]:
    """Estimate once per sweep value; one failing value does not stop the rest."""
    if cfg.sweep is None:
        raise ConfigError("sweep: no sweep configured")
    text, query = _parse_query(cfg)
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.open(out, cfg)
    param = cfg.sweep.param
    results: dict[float, EstimationResult | Exception] = {}
    combined = []
    try:
        for v in cfg.sweep.values:
            key = _sweep_key(param, v)
            model = cfg.model.with_value(param, v)
            name = f"estimate_{param}_{format_value(v)}"
            log.info("sweep %s", key)
            try:
                res = _estimate_one(model, cfg, query, text, out, name, manifest, threads, None, key, v)
            except EstimationError as exc:
                log.error("sweep %s failed: %s", key, exc)
                manifest.failures[key] = str(exc)
                results[v] = exc
                continue
            results[v] = res
            combined += [(v, e.instance, e.mean, e.ci_halfwidth, e.n) for e in res.instances]
        path = csvio.write(out / "sweep.csv", csvio.SWEEP_HEADER, combined)
        manifest.add_file(out, path)
    finally:
        manifest.save(out)
    return results


def _summaries_from_samples(path: Path, alpha: float) -> list[InstanceEstimate]:
    labels, runs = csvio.read_samples(path)
    out = []
    for k, label in enumerate(labels):
        acc = Accumulator()
        for i, run in enumerate(runs):
            acc.update(run[k], i)
        hw = ci_halfwidth(acc, alpha)
        out.append(InstanceEstimate(label, None, acc.mean, acc.variance, acc.n, hw, True))
    return out


def cmd_compare(cfg: ExperimentConfig) -> list[Path]:
    """Welch tests for every configured pair of sweep values."""
    if cfg.sweep is None:
        raise ConfigError("compare: needs a sweep section")
    if not cfg.compare:
        raise ConfigError("compare: no pairs configured")
    text, _ = _parse_query(cfg)
    out = cfg.out_dir()
    param = cfg.sweep.param
    manifest = RunManifest.open(out, cfg)
    alpha = cfg.smc.confidence_alpha
    paths = []
    try:
        for a, b in cfg.compare:
            pair = f"({format_value(a)}, {format_value(b)})"
            groups = []
            for v in (a, b):
                if v not in cfg.sweep.values:
                    raise DependencyError(f"compare pair {pair}: {param}={format_value(v)} is not a sweep value")
                digest = config_hash(cfg.model.with_value(param, v), cfg.smc, text)
                smp = out / f"samples_{digest}.csv"
                if not smp.exists():
                    raise DependencyError(
                        f"compare pair {pair}: no estimation output for {param}={format_value(v)} "
                        f"(run 'islet sweep' first)"
                    )
                groups.append(_summaries_from_samples(smp, alpha))
            report = compare_series(groups[0], groups[1], alpha)
            name = f"compare_{param}_{format_value(a)}_vs_{format_value(b)}.csv"
            path = csvio.write(out / name, csvio.COMPARE_HEADER, csvio.compare_rows(report))
            manifest.comparisons[f"{format_value(a)} vs {format_value(b)}"] = manifest.add_file(out, path)
            paths.append(path)
    finally:
        if out.exists():
            manifest.save(out)
    return paths


def _xs(estimates: Sequence[InstanceEstimate]) -> list[float]:
    if all(e.binding is not None for e in estimates):
        return [e.binding for e in estimates]
    return [float(i) for i in range(len(estimates))]


def _comparison_row(label: str, path: Path) -> plot.MarkerRow:
    rows = csvio.read_comparison(path)
    xs = []
    for i, (inst, _) in enumerate(rows):
        try:
            xs.append(float(inst))
        except ValueError:
            xs.append(float(i))
    return plot.MarkerRow(label, xs, [r for _, r in rows])


def cmd_plot(
    cfg: ExperimentConfig | None = None,
    csvs: Sequence[Path] = (),
    comparisons: Sequence[Path] = (),
    svg: Path | None = None,
) -> Path:
    """Line chart of estimated means with CI bands, plus t-test marker rows."""
    series: list[plot.Series] = []
    markers: list[plot.MarkerRow] = []
    xlabel = "t"
    title = ""
    if csvs:
        for p in csvs:
            est = csvio.read_estimates(Path(p))
            series.append(plot.Series(Path(p).stem, _xs(est), [e.mean for e in est], [e.ci_halfwidth for e in est]))
        for p in comparisons:
            markers.append(_comparison_row(Path(p).stem, Path(p)))
        out_path = Path(svg) if svg else Path(csvs[0]).with_suffix(".svg")
    else:
        if cfg is None:
            raise ConfigError("plot: needs --config or --csv")
        out = cfg.out_dir()
        manifest = RunManifest.open(out, cfg)
        if cfg.sweep is None:
            est = csvio.read_estimates(out / "estimate.csv")
            series.append(plot.Series("estimate", _xs(est), [e.mean for e in est], [e.ci_halfwidth for e in est]))
        else:
            param = cfg.sweep.param
            title = f"sweep over {param}"
            per_value = []
            for v in cfg.sweep.values:
                path = out / f"estimate_{param}_{format_value(v)}.csv"
                if not path.exists():
                    raise DependencyError(f"plot: missing {path.name} (run 'islet sweep' first)")
                per_value.append((v, csvio.read_estimates(path)))
            if all(len(est) == 1 for _, est in per_value):
                xlabel = param
                series.append(plot.Series(
                    per_value[0][1][0].instance,
                    [v for v, _ in per_value],
                    [est[0].mean for _, est in per_value],
                    [est[0].ci_halfwidth for _, est in per_value],
                ))
            else:
                for v, est in per_value:
                    series.append(plot.Series(
                        f"{param}={format_value(v)}", _xs(est), [e.mean for e in est], [e.ci_halfwidth for e in est]
                    ))
                for a, b in cfg.compare:
                    path = out / f"compare_{param}_{format_value(a)}_vs_{format_value(b)}.csv"
                    if path.exists():
                        markers.append(_comparison_row(f"{format_value(a)} vs {format_value(b)}", path))
        out_path = Path(svg) if svg else out / "plot.svg"
    text = plot.render(series, markers, title=title, xlabel=xlabel)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(text, encoding="utf-8")
    if not csvs and cfg is not None:
        out = cfg.out_dir()
        if out_path.resolve().parent == out.resolve():
            manifest.add_file(out, out / out_path.name)
            manifest.save(out)
    return out_path


# --------------------------------------------------------------------------
# entry point


def _threads(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("ISLET_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"ISLET_THREADS: not an integer: {env!r}") from None
    return 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="islet", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=("simulate", "estimate", "sweep", "compare", "plot"))
    ap.add_argument("--config", help="experiment configuration (YAML)")
    ap.add_argument("--seed", type=int, help="master seed (run seed for 'simulate')")
    ap.add_argument("--out", help="output directory, overrides output.dir")
    ap.add_argument("--threads", type=int, help="worker processes per block (default $ISLET_THREADS or 1)")
    ap.add_argument("--csv", action="append", default=[], help="plot: estimation CSV (repeatable)")
    ap.add_argument("--comparison", action="append", default=[], help="plot: comparison CSV (repeatable)")
    ap.add_argument("--svg", help="plot: output file")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        threads = _threads(args.threads)
        cfg = None
        if args.config:
            cfg = load_config(args.config).with_output(args.out)
            if args.command != "simulate":
                cfg = cfg.with_seed(args.seed)
        elif args.command != "plot" or not args.csv:
            raise ConfigError(f"{args.command}: --config is required")

        if args.command == "simulate":
            print(cmd_simulate(cfg, args.seed))
        elif args.command == "estimate":
            res = cmd_estimate(cfg, threads)
            _report(res)
        elif args.command == "sweep":
            results = cmd_sweep(cfg, threads)
            failed = [v for v, r in results.items() if isinstance(r, Exception)]
            if failed:
                print(f"sweep: {len(failed)} value(s) failed", file=sys.stderr)
                return EXIT_RUNTIME
        elif args.command == "compare":
            for p in cmd_compare(cfg):
                print(p)
        else:
            print(cmd_plot(cfg, args.csv, args.comparison, args.svg))
    except (ConfigError, ParameterError) as exc:
        print(f"islet: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DependencyError, CsvFormatError, OSError) as exc:
        print(f"islet: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EstimationError, quatex.QuatexError, ArithmeticError, RuntimeError) as exc:
        print(f"islet: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _report(res: EstimationResult) -> None:
    missed = sum(not e.converged for e in res.instances)
    print(f"{res.runs} runs, {len(res.instances)} instance(s), {missed} not converged")


if __name__ == "__main__":
    sys.exit(main())
