"""Minimal static SVG line plots (polylines and axes, no external renderer)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

WIDTH, HEIGHT = 640, 480
MARGIN_LEFT, MARGIN_RIGHT = 70, 20
MARGIN_TOP, MARGIN_BOTTOM = 40, 50

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, count: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / count))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if span / (step * mult) <= count:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12 * span:
        ticks.append(t)
        t += step
    return ticks


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 1e7:
        return str(int(v))
    return f"{v:.3g}"


def line_plot_svg(path, series: Sequence[tuple], title: str = "",
                  xlabel: str = "k", ylabel: str = "value", logy: bool = False) -> None:
    """Write a line plot to ``path``.

    ``series`` is a sequence of ``(label, xs, ys)`` triples.  With ``logy``
    the y-values are plotted as log10 (non-positive entries are dropped).
    """
    plotted = []
    for label, xs, ys in series:
        pts = []
        for x, y in zip(xs, ys):
            if y is None:
                continue
            if logy:
                if y <= 0.0:
                    continue
                y = math.log10(y)
            if math.isfinite(x) and math.isfinite(y):
                pts.append((float(x), float(y)))
        if pts:
            plotted.append((label, pts))

    if plotted:
        xlo = min(p[0] for _, pts in plotted for p in pts)
        xhi = max(p[0] for _, pts in plotted for p in pts)
        ylo = min(p[1] for _, pts in plotted for p in pts)
        yhi = max(p[1] for _, pts in plotted for p in pts)
    else:
        xlo, xhi, ylo, yhi = 0.0, 1.0, 0.0, 1.0
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0

    inner_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    inner_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def sx(x: float) -> float:
        return MARGIN_LEFT + (x - xlo) / (xhi - xlo) * inner_w

    def sy(y: float) -> float:
        return MARGIN_TOP + (yhi - y) / (yhi - ylo) * inner_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
    ]
    axis_color = "#333333"
    x0, y0 = MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM
    out.append(
        f'<line x1="{x0}" y1="{MARGIN_TOP}" x2="{x0}" y2="{y0}" stroke="{axis_color}"/>'
    )
    out.append(
        f'<line x1="{x0}" y1="{y0}" x2="{WIDTH - MARGIN_RIGHT}" y2="{y0}" stroke="{axis_color}"/>'
    )
    for t in _ticks(xlo, xhi):
        px = sx(t)
        out.append(f'<line x1="{px:.1f}" y1="{y0}" x2="{px:.1f}" y2="{y0 + 5}" stroke="{axis_color}"/>')
        out.append(
            f'<text x="{px:.1f}" y="{y0 + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>'
        )
    for t in _ticks(ylo, yhi):
        py = sy(t)
        out.append(f'<line x1="{x0 - 5}" y1="{py:.1f}" x2="{x0}" y2="{py:.1f}" stroke="{axis_color}"/>')
        out.append(
            f'<text x="{x0 - 8}" y="{py + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>'
        )
    out.append(
        f'<text x="{MARGIN_LEFT + inner_w / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{xlabel}</text>'
    )
    out.append(
        f'<text x="16" y="{MARGIN_TOP + inner_h / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 16 {MARGIN_TOP + inner_h / 2:.1f})">{ylabel}</text>'
    )
    for idx, (label, pts) in enumerate(plotted):
        color = PALETTE[idx % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(
            f'<text x="{WIDTH - MARGIN_RIGHT - 6}" y="{MARGIN_TOP + 16 + 16 * idx}" '
            f'text-anchor="end" font-family="sans-serif" font-size="12" '
            f'fill="{color}">{label}</text>'
        )
    out.append("</svg>")
    Path(path).write_text("\n".join(out), encoding="utf-8")
