"""Acceptance suite: one test per criterion, each recording a pass/fail line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the summary
lines are printed at the end of the session.
"""

from __future__ import annotations

import copy
import math
import random
import shutil
import time
import warnings
from pathlib import Path

import pytest
from scipy import stats as sps

from islet import cli, csvio, quatex
from islet.config import format_value, load_config
from islet.hyptest import SampleSummary, compare_series, welch_test
from islet.model import EXPLORER, IMITATOR, MINER, ModelParams, reset, step
from islet.simapi import IslandFactory, ScriptedSimulator, SyntheticNormalFactory
from islet.smc import EstimationError, NonConvergenceWarning, SmcSettings, estimate
from islet.stats import t_quantile

from conftest import ACCEPTANCE_LINES

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
DELTA = 1.0

# every estimate produced here, for the SMC-contract check
ALL_ESTIMATES: list = []


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"


def by_label(estimates):
    return {e.instance: e for e in estimates}


# ---------------------------------------------------------------- criterion 1


@pytest.fixture(scope="module")
def growth_scenarios(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenarios")
    runs = {}
    start = time.perf_counter()
    for name in ("sustained", "stagnation"):
        cfg = load_config(CONFIGS / f"{name}.yaml").with_output(str(out / name))
        cli.cmd_estimate(cfg)
        est = csvio.read_estimates(out / name / "estimate.csv")
        ALL_ESTIMATES.extend(est)
        runs[name] = est
    return runs, time.perf_counter() - start


def test_criterion_1_stagnation_vs_sustained(growth_scenarios):
    runs, seconds = growth_scenarios
    sus, stag = by_label(runs["sustained"]), by_label(runs["stagnation"])
    s201, g201 = sus["201"], stag["201"]
    ratio = s201.mean / g201.mean
    disjoint = s201.mean - s201.ci_halfwidth > g201.mean + g201.ci_halfwidth
    plateau = abs(stag["201"].mean - stag["101"].mean)
    converged = all(e.converged for e in runs["sustained"] + runs["stagnation"])
    ok = ratio >= 1.5 and disjoint and plateau < DELTA and converged
    record(
        1,
        ok,
        f"logGDP(201) sustained {s201.mean:.2f}±{s201.ci_halfwidth:.2f} (n={s201.n}) vs "
        f"stagnation {g201.mean:.2f}±{g201.ci_halfwidth:.2f} (n={g201.n}); ratio {ratio:.2f}; "
        f"plateau change {plateau:.3f}; {seconds:.0f}s",
    )
    assert ok


# ---------------------------------------------------------------- criterion 2


def test_criterion_2_exploration_hump():
    query = quatex.parse((ROOT / "queries" / "agr.quatex").read_text())
    agr = {}
    for eps in (0.0, 0.1, 0.3, 0.5, 0.7, 0.9):
        res = estimate(IslandFactory(ModelParams(exploration_prob=eps)), query, SmcSettings(master_seed=4))
        ALL_ESTIMATES.extend(res.instances)
        agr[eps] = res.instances[0]

    def disjoint(lo, hi):
        return lo.mean + lo.ci_halfwidth < hi.mean - hi.ci_halfwidth

    ok = (
        agr[0.0].mean < agr[0.1].mean
        and agr[0.9].mean < agr[0.1].mean
        and disjoint(agr[0.0], agr[0.1])
        and disjoint(agr[0.9], agr[0.1])
        and abs(agr[0.0].mean) <= DELTA
    )
    shape = ", ".join(f"{k}: {v.mean:.4f}±{v.ci_halfwidth:.4f}" for k, v in agr.items())
    record(2, ok, f"AGR_total by eps {{{shape}}}")
    assert ok


# ---------------------------------------------------------------- criterion 3


def test_criterion_3_alpha_ordering_and_tests(tmp_path):
    cfg = load_config(CONFIGS / "alpha_sweep.yaml").with_output(str(tmp_path))
    cli.cmd_sweep(cfg)
    cli.cmd_compare(cfg)
    at201 = {}
    for v in cfg.sweep.values:
        est = csvio.read_estimates(tmp_path / f"estimate_returns_to_scale_{format_value(v)}.csv")
        ALL_ESTIMATES.extend(est)
        at201[v] = by_label(est)["201"]
    rejects = {}
    for a, b in cfg.compare:
        rows = dict(csvio.read_comparison(tmp_path / f"compare_returns_to_scale_{format_value(a)}_vs_{format_value(b)}.csv"))
        rejects[(a, b)] = rows["201"]
    ordered = at201[0.9].mean < at201[1.0].mean < at201[1.1].mean
    ok = ordered and all(rejects.values())
    means = ", ".join(f"{v}: {e.mean:.2f}" for v, e in at201.items())
    tests = ", ".join(f"{a} vs {b}: {'reject' if r else 'keep'}" for (a, b), r in rejects.items())
    record(3, ok, f"logGDP(201) {{{means}}}; Welch at t=201 {{{tests}}}")
    assert ok


# ---------------------------------------------------------------- criterion 4


def test_criterion_4_smc_contract(growth_scenarios):
    x = quatex.parse('eval E[ s.rval("x") ];')
    unit = estimate(SyntheticNormalFactory(0.0, 1.0), x, SmcSettings(master_seed=3))
    wide = estimate(SyntheticNormalFactory(0.0, 5.0), x, SmcSettings(master_seed=3))
    ALL_ESTIMATES.extend(unit.instances + wide.instances)
    oracle_blocks = math.ceil(math.ceil((2 * 1.96 * 5.0) ** 2) / 30)
    bad = [e for e in ALL_ESTIMATES if e.converged and 2 * e.ci_halfwidth > DELTA]
    ok = unit.runs == 30 and abs(wide.runs / 30 - oracle_blocks) <= 2 and not bad
    record(
        4,
        ok,
        f"{len(ALL_ESTIMATES)} estimate rows, {len(bad)} converged rows wider than delta; "
        f"unit variance stopped at {unit.runs} runs; variance 25 at {wide.runs} runs "
        f"({wide.runs // 30} blocks vs oracle {oracle_blocks})",
    )
    assert ok


# ---------------------------------------------------------------- criterion 5


def test_criterion_5_ci_coverage():
    x = quatex.parse('eval E[ s.rval("x") ];')
    factory = SyntheticNormalFactory(0.0, 1.0)
    hits = 0
    for rep in range(500):
        (e,) = estimate(factory, x, SmcSettings(master_seed=10_000 + rep)).instances
        hits += abs(e.mean) <= e.ci_halfwidth
    rate = hits / 500
    ok = 0.90 <= rate <= 0.99
    record(5, ok, f"coverage {rate:.3f} over 500 estimates (nominal 0.95)")
    assert ok


# ---------------------------------------------------------------- criterion 6


def test_criterion_6_welch_fixtures():
    a, b = SampleSummary(10.0, 4.0, 30), SampleSummary(12.0, 9.0, 30)
    r = welch_test(a, b)
    ref = sps.ttest_ind_from_stats(10.0, 2.0, 30, 12.0, 3.0, 30, equal_var=False)
    ref_df = (4 / 30 + 9 / 30) ** 2 / ((4 / 30) ** 2 / 29 + (9 / 30) ** 2 / 29)
    q = t_quantile(0.975, 29)
    ok = (
        abs(r.t - -3.0382) <= 1e-3
        and abs(r.df - 50.53) <= 1e-3 + 0.005  # the fixture is quoted to two decimals
        and abs(r.t - ref.statistic) <= 1e-3
        and abs(r.df - ref_df) <= 1e-3
        and abs(r.p - ref.pvalue) <= 1e-6
        and abs(q - 2.04523) <= 1e-4
        and abs(q - sps.t.ppf(0.975, 29)) <= 1e-4
    )
    record(6, ok, f"t={r.t:.4f} df={r.df:.4f} p={r.p:.5f} (scipy t={ref.statistic:.4f} p={ref.pvalue:.5f}); "
                  f"t_quantile(0.975, 29)={q:.5f}")
    assert ok


# ---------------------------------------------------------------- criterion 7


def test_criterion_7_type_one_error():
    query = quatex.parse(
        'obsAtStep(t, obs) = if (s.rval("steps") == t) then s.rval(obs) else # obsAtStep(t, obs) fi;\n'
        'eval E[ obsAtStep(201, "logGDP") ];'
    )
    factory = IslandFactory(ModelParams())
    reps, rejected, aborted, seed = 500, 0, 0, 0
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        done = 0
        while done < reps:
            seed += 2
            try:
                groups = [
                    estimate(factory, query, SmcSettings(master_seed=seed + k, block_size=30, max_runs=30)).instances
                    for k in (0, 1)
                ]
            except EstimationError:
                # a run with GDP 0 at t=201 aborts its estimate; the pair is
                # replaced by the next seeds, which conditions both groups alike
                aborted += 1
                continue
            (c,) = compare_series(groups[0], groups[1], 0.05)
            rejected += c.reject
            done += 1
    rate = rejected / reps
    ok = abs(rate - 0.05) <= 0.04
    record(7, ok, f"rejection rate {rate:.3f} over {reps} same-config comparisons (n=30 each); "
                  f"{aborted} seed pairs replaced after a zero-GDP abort; {time.perf_counter() - start:.0f}s")
    assert ok


# ---------------------------------------------------------------- criterion 8

SCRIPT = {
    "steps": lambda s: float(s),
    "a": lambda s: float((3 * s) % 7),
    "b": lambda s: s * s / 4.0,
    "c": lambda s: 10.0 * s,
}
OBS = ("a", "b", "c")


def _value_expr(rng: random.Random, depth: int, names: list[str], helper: bool = True) -> str:
    """Random numeric expression over observables, variables and the helper."""
    r = rng.random()
    if depth <= 0 or r < 0.3:
        pick = rng.randrange(4)
        if pick == 0:
            return str(rng.randint(0, 9))
        if pick == 1:
            return f's.rval("{rng.choice(OBS)}")'
        if pick == 2 and names:
            return rng.choice(names)
        return "s.rval(o)" if helper else f's.rval("{rng.choice(OBS)}")'
    sub = lambda: _value_expr(rng, depth - 1, names, helper)  # noqa: E731
    if r < 0.55:
        op = rng.choice(["+", "-", "*"])
        return f"({sub()} {op} {sub()})"
    if r < 0.65:
        return f"({sub()} / {rng.choice(['2', '4'])})"
    if r < 0.75:
        return f"-{sub()}"
    if r < 0.88 or not helper:
        cmp = rng.choice(["<", ">", "=="])
        return f"if ({sub()} {cmp} {sub()}) then {sub()} else {sub()} fi"
    return f"g({sub()}, {sub()})"


def random_query(rng: random.Random) -> str:
    helper_body = _value_expr(rng, 2, ["u", "v"], helper=False)
    value = _value_expr(rng, 3, ["t", "k"])
    kind = rng.randrange(3)
    if kind == 0:
        walker = (f"f(t, k, o) = if (s.rval(\"steps\") == t) then {value} "
                  f"else # f(t, k, o) fi;")
    elif kind == 1:
        walker = (f"f(t, k, o) = if (s.rval(\"steps\") < t) then # f(t, k + s.rval(\"a\"), o) "
                  f"else {value} fi;")
    else:
        walker = (f"f(t, k, o) = if (s.rval(\"steps\") > t) then {value} "
                  f"else # f(t, (k * 2) - s.rval(\"a\"), o) fi;")
    lines = [f"g(u, v) = {helper_body};", walker]
    for _ in range(rng.randint(1, 3)):
        obs = rng.choice(OBS)
        # advancing calls may only sit in tail position, so wrap them in an if at most
        if rng.random() < 0.3:
            lines.append(f'eval E[ f({rng.randint(0, 30)}, {rng.randint(0, 3)}, "{obs}") ];')
            continue
        start, stride = rng.randint(0, 6), rng.randint(1, 7)
        end = start + rng.randint(0, 35)
        body = rng.choice([
            f'f(x, 1, "{obs}")',
            f'f(x, g(x, 1), "{obs}")',
            f'if (x > {rng.randint(0, 20)}) then f(x, 2, "{obs}") else g(x, 3) fi',
        ])
        lines.append(f"eval parametric(E[ {body} ], x, {start}, {stride}, {end});")
    return "\n".join(lines) + "\n"


class NaiveEvaluator:
    """Textbook recursive semantics: ``#`` advances the run, then recurses."""

    def __init__(self, qs: quatex.QuerySpec, sim):
        self.funs = {f.name: f for f in qs.functions}
        self.sim = sim

    def ev(self, e, env):
        if isinstance(e, quatex.Num):
            return e.value
        if isinstance(e, quatex.Str):
            return e.value
        if isinstance(e, quatex.Var):
            return env[e.name]
        if isinstance(e, quatex.Rval):
            return self.sim.eval(self.ev(e.arg, env))
        if isinstance(e, quatex.Neg):
            return -self.ev(e.operand, env)
        if isinstance(e, quatex.BinOp):
            a, b = self.ev(e.left, env), self.ev(e.right, env)
            return {
                "+": lambda: a + b, "-": lambda: a - b, "*": lambda: a * b, "/": lambda: a / b,
                "<": lambda: a < b, ">": lambda: a > b, "==": lambda: a == b,
            }[e.op]()
        if isinstance(e, quatex.If):
            return self.ev(e.then if self.ev(e.cond, env) else e.orelse, env)
        if isinstance(e, quatex.Call):
            f = self.funs[e.name]
            return self.ev(f.body, dict(zip(f.params, [self.ev(a, env) for a in e.args])))
        if isinstance(e, quatex.Next):
            f = self.funs[e.call.name]
            args = [self.ev(a, env) for a in e.call.args]
            self.sim.next()
            return self.ev(f.body, dict(zip(f.params, args)))
        raise TypeError(e)


def per_instance_fresh(qs: quatex.QuerySpec) -> list[float]:
    out = []
    for d in qs.directives:
        if isinstance(d, quatex.Single):
            bindings = [None]
        else:
            bindings, v = [], d.start
            while v <= d.end:
                bindings.append(v)
                v += d.step
        for v in bindings:
            sim = ScriptedSimulator(SCRIPT, horizon=200).reset(0)
            env = {} if v is None else {d.param: v}
            out.append(float(NaiveEvaluator(qs, sim).ev(d.expr, env)))
    return out


def test_criterion_8_query_evaluator_oracle():
    rng = random.Random(20240)
    checked, mismatches, example = 0, 0, ""
    while checked < 100:
        source = random_query(rng)
        qs = quatex.parse(source)
        one_pass = quatex.evaluate(qs, ScriptedSimulator(SCRIPT, horizon=200).reset(0))
        fresh = per_instance_fresh(qs)
        if one_pass != fresh:
            mismatches += 1
            example = example or source
        checked += 1
    ok = mismatches == 0
    record(8, ok, f"{checked} random queries, {mismatches} mismatches between one-pass and fresh-run evaluation")
    assert ok, example


# ---------------------------------------------------------------- criterion 9

ALLOWED = {
    (MINER, MINER), (MINER, EXPLORER), (MINER, IMITATOR),
    (EXPLORER, EXPLORER), (EXPLORER, MINER),
    (IMITATOR, IMITATOR), (IMITATOR, MINER),
}


def _random_params(rng: random.Random, k: int) -> ModelParams:
    return ModelParams(
        n_agents=rng.randint(1, 40),
        horizon=rng.randint(1, 201),
        island_density=rng.random(),
        returns_to_scale=rng.uniform(0.5, 2.0),
        exploration_prob=0.0 if k % 10 == 0 else rng.random(),
        breakthrough_rate=rng.uniform(0, 3),
        skill_weight=rng.uniform(0, 2),
        signal_decay=rng.uniform(0, 5),
    )


def test_criterion_9_model_invariants():
    rng = random.Random(99)
    failures: dict[str, int] = {}

    def fail(what):
        failures[what] = failures.get(what, 0) + 1

    for k in range(1000):
        p = _random_params(rng, k)
        seed = rng.getrandbits(64)
        w = reset(p, seed)
        kinds = {a.id: a.kind for a in w.agents}
        for t in range(p.horizon):
            if t == p.horizon // 2:
                twin = copy.deepcopy(w)
            step(w)
            if len(w.agents) != p.n_agents:
                fail("conservation")
            if w.gdp_series[-1] < 0 or not math.isfinite(w.gdp_series[-1]):
                fail("gdp")
            for a in w.agents:
                if (kinds[a.id], a.kind) not in ALLOWED:
                    fail("transition")
                kinds[a.id] = a.kind
        if p.exploration_prob == 0.0 and len(set(w.gdp_series)) != 1:
            fail("eps0")
        replay = reset(p, seed)
        for _ in range(p.horizon):
            step(replay)
        if replay.gdp_series != w.gdp_series:
            fail("replay")
        while twin.step < p.horizon:
            step(twin)
        if twin.gdp_series != w.gdp_series:
            fail("state-replay")
    ok = not failures
    record(9, ok, f"1000 random runs; violations {failures or 'none'}")
    assert ok


# ---------------------------------------------------------------- criterion 10


def test_criterion_10_pipeline_determinism(tmp_path):
    cfg_path = CONFIGS / "alpha_sweep.yaml"
    digests = []
    for threads in (1, 2):
        out = tmp_path / f"threads{threads}"
        for command in ("sweep", "compare"):
            code = cli.main([command, "--config", str(cfg_path), "--out", str(out), "--threads", str(threads)])
            assert code == 0
        digests.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    same = digests[0] == digests[1]
    ok = same and len(digests[0]) >= 10
    record(10, ok, f"{len(digests[0])} CSV files, byte-identical for --threads 1 and 2: {same}")
    shutil.rmtree(tmp_path, ignore_errors=True)
    assert ok
