"""CSV readers and writers for traces, estimates, samples and comparisons.

Every file has a header row, comma separators and LF line endings. Floats
are written with ``repr`` (shortest round-trip form), so rereading a file
gives back the exact values and reruns produce identical bytes.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

from .hyptest import Comparison
from .smc import InstanceEstimate

TRACE_HEADER = ("step", "GDP", "logGDP", "n_miners", "n_imitators", "n_explorers", "n_islands")
ESTIMATE_HEADER = ("instance", "mean", "variance", "n", "ci_halfwidth", "converged")
SAMPLES_HEADER = ("run_index", "instance", "value")
SWEEP_HEADER = ("param_value", "instance", "mean", "ci_halfwidth", "n")
COMPARE_HEADER = ("instance", "mean_a", "mean_b", "t", "df", "p", "reject", "power")


class CsvFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render(header, rows))
    return path


def read(path: Path, header: Sequence[str]) -> list[tuple[int, dict]]:
    """Rows as (line number, record); the header must match exactly."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != tuple(header):
        got = rows[0] if rows else "nothing"
        raise CsvFormatError(path, 1, f"expected header {','.join(header)}, got {got}")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise CsvFormatError(path, i, f"expected {len(header)} fields, got {len(row)}")
        out.append((i, dict(zip(header, row))))
    return out


def _float(path, line, rec, key) -> float:
    try:
        return float(rec[key])
    except ValueError:
        raise CsvFormatError(path, line, f"{key}: not a number: {rec[key]!r}") from None


def _int(path, line, rec, key) -> int:
    try:
        return int(rec[key])
    except ValueError:
        raise CsvFormatError(path, line, f"{key}: not an integer: {rec[key]!r}") from None


def _flag(path, line, rec, key) -> bool:
    if rec[key] not in ("0", "1"):
        raise CsvFormatError(path, line, f"{key}: expected 0 or 1, got {rec[key]!r}")
    return rec[key] == "1"


def estimate_rows(estimates: Iterable[InstanceEstimate]):
    for e in estimates:
        yield (e.instance, e.mean, e.variance, e.n, e.ci_halfwidth, e.converged)


def read_estimates(path: Path) -> list[InstanceEstimate]:
    out = []
    for line, rec in read(path, ESTIMATE_HEADER):
        binding = None
        try:
            binding = float(rec["instance"])
        except ValueError:
            pass
        out.append(
            InstanceEstimate(
                instance=rec["instance"],
                binding=binding,
                mean=_float(path, line, rec, "mean"),
                variance=_float(path, line, rec, "variance"),
                n=_int(path, line, rec, "n"),
                ci_halfwidth=_float(path, line, rec, "ci_halfwidth"),
                converged=_flag(path, line, rec, "converged"),
            )
        )
    return out


def sample_rows(labels: Sequence[str], samples: Sequence[Sequence[float]]):
    for i, values in enumerate(samples):
        for label, v in zip(labels, values):
            yield (i, label, v)


def read_samples(path: Path) -> tuple[list[str], list[list[float]]]:
    """Instance labels (first-seen order) and the run-major sample matrix."""
    labels: list[str] = []
    runs: list[list[float]] = []
    for line, rec in read(path, SAMPLES_HEADER):
        i = _int(path, line, rec, "run_index")
        if i == len(runs):
            runs.append([])
        elif i != len(runs) - 1:
            raise CsvFormatError(path, line, f"run_index {i} out of order")
        if i == 0:
            labels.append(rec["instance"])
        k = len(runs[i])
        if k >= len(labels) or labels[k] != rec["instance"]:
            raise CsvFormatError(path, line, f"unexpected instance {rec['instance']!r}")
        runs[i].append(_float(path, line, rec, "value"))
    if any(len(r) != len(labels) for r in runs):
        raise CsvFormatError(path, 0, "runs have differing instance counts")
    return labels, runs


def compare_rows(report: Iterable[Comparison]):
    for c in report:
        yield (c.instance, c.mean_a, c.mean_b, c.t, c.df, c.p, c.reject, c.power)


def read_comparison(path: Path) -> list[tuple[str, bool]]:
    return [(rec["instance"], _flag(path, line, rec, "reject")) for line, rec in read(path, COMPARE_HEADER)]
