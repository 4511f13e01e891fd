"""Hand-written SVG line charts with confidence bands and test-marker rows."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")

WIDTH = 760
LEFT, RIGHT, TOP = 70, 24, 44
PLOT_H = 340
ROW_H = 22


@dataclass
class Series:
    label: str
    xs: Sequence[float]
    means: Sequence[float]
    halfwidths: Sequence[float]


@dataclass
class MarkerRow:
    label: str
    xs: Sequence[float]
    rejects: Sequence[bool]


def nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    k = 0
    while first + k * step <= hi + 1e-9 * step:
        ticks.append(round(first + k * step, 12))
        k += 1
    return ticks


def _num(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    return f"{v:g}"


def render(
    series: Sequence[Series],
    markers: Sequence[MarkerRow] = (),
    title: str = "",
    xlabel: str = "t",
    ylabel: str = "",
) -> str:
    """Return a standalone SVG document (no timestamps, deterministic)."""
    pts = [
        (x, m, h)
        for s in series
        for x, m, h in zip(s.xs, s.means, s.halfwidths)
        if math.isfinite(m) and math.isfinite(x)
    ]
    xs = [p[0] for p in pts] + [x for r in markers for x in r.xs]
    if not xs:
        raise ValueError("nothing to plot")
    x_lo, x_hi = min(xs), max(xs)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    lows = [m - (h if math.isfinite(h) else 0.0) for _, m, h in pts] or [0.0]
    highs = [m + (h if math.isfinite(h) else 0.0) for _, m, h in pts] or [1.0]
    y_ticks = nice_ticks(min(lows), max(highs))
    y_lo, y_hi = min(y_ticks[0], min(lows)), max(y_ticks[-1], max(highs))
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    plot_w = WIDTH - LEFT - RIGHT
    rows_top = TOP + PLOT_H + 40
    height = rows_top + ROW_H * len(markers) + (30 if markers else 0)

    def px(x: float) -> float:
        return LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return TOP + (y_hi - y) / (y_hi - y_lo) * PLOT_H

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {height}" '
        f'width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>')

    # axes and grid
    out.append(
        f'<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{PLOT_H}" '
        'fill="none" stroke="#333"/>'
    )
    for v in y_ticks:
        y = py(v)
        out.append(f'<line x1="{LEFT}" y1="{_num(y)}" x2="{LEFT + plot_w}" y2="{_num(y)}" stroke="#ddd"/>')
        out.append(f'<text x="{LEFT - 6}" y="{_num(y + 4)}" text-anchor="end">{_tick_label(v)}</text>')
    for v in nice_ticks(x_lo, x_hi):
        x = px(v)
        out.append(f'<line x1="{_num(x)}" y1="{TOP + PLOT_H}" x2="{_num(x)}" y2="{TOP + PLOT_H + 5}" stroke="#333"/>')
        out.append(f'<text x="{_num(x)}" y="{TOP + PLOT_H + 18}" text-anchor="middle">{_tick_label(v)}</text>')
    out.append(
        f'<text x="{LEFT + plot_w / 2:.1f}" y="{TOP + PLOT_H + 34}" text-anchor="middle">{escape(xlabel)}</text>'
    )
    if ylabel:
        cy = TOP + PLOT_H / 2
        out.append(
            f'<text x="16" y="{cy:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 16 {cy:.1f})">{escape(ylabel)}</text>'
        )

    # bands first so lines sit on top
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        seg = [(x, m, h) for x, m, h in zip(s.xs, s.means, s.halfwidths) if math.isfinite(m)]
        if not seg:
            continue
        upper = [f"{_num(px(x))},{_num(py(m + h))}" for x, m, h in seg if math.isfinite(h)]
        lower = [f"{_num(px(x))},{_num(py(m - h))}" for x, m, h in reversed(seg) if math.isfinite(h)]
        if upper:
            out.append(
                f'<polygon class="ci-band" points="{" ".join(upper + lower)}" '
                f'fill="{color}" fill-opacity="0.2" stroke="none"/>'
            )
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        seg = [(x, m) for x, m in zip(s.xs, s.means) if math.isfinite(m)]
        line = " ".join(f"{_num(px(x))},{_num(py(m))}" for x, m in seg)
        out.append(f'<polyline class="mean" points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, m in seg:
            out.append(f'<circle cx="{_num(px(x))}" cy="{_num(py(m))}" r="2.5" fill="{color}"/>')

    # legend
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        y = TOP + 16 + 16 * i
        out.append(f'<line x1="{LEFT + 10}" y1="{y - 4}" x2="{LEFT + 30}" y2="{y - 4}" stroke="{color}" stroke-width="3"/>')
        out.append(f'<text x="{LEFT + 36}" y="{y}">{escape(s.label)}</text>')

    # t-test rows: dot = equal means kept, cross = rejected
    if markers:
        out.append(
            f'<text x="{LEFT}" y="{rows_top - 4}" font-size="11">'
            "t-test: • equal means, × different means</text>"
        )
    for j, row in enumerate(markers):
        y = rows_top + ROW_H * j + ROW_H / 2
        out.append(f'<g class="marker-row" data-label="{escape(row.label)}">')
        out.append(f'<text x="{LEFT - 6}" y="{_num(y + 4)}" text-anchor="end" font-size="11">{escape(row.label)}</text>')
        for x, rej in zip(row.xs, row.rejects):
            glyph = "×" if rej else "•"
            kind = "reject" if rej else "accept"
            out.append(
                f'<text class="{kind}" x="{_num(px(x))}" y="{_num(y + 5)}" '
                f'text-anchor="middle" font-size="14">{glyph}</text>'
            )
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
