"""Deterministic SVG line charts for pose curves and training logs."""

from __future__ import annotations

import csv
import io
from html import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")

W, H = 480, 320
LEFT, RIGHT, TOP, BOTTOM = 56, 16, 16, 44


def read_curve_csv(text: str) -> tuple[str, str, list[tuple[float, float]]]:
    """First two columns of a headed CSV as (x, y) floats."""
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2 or len(rows[0]) < 2:
        raise ValueError("curve CSV needs a header and at least one data row")
    pts = []
    for i, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        try:
            pts.append((float(r[0]), float(r[1])))
        except (ValueError, IndexError) as exc:
            raise ValueError(f"row {i}: cannot parse {r!r}") from exc
    return rows[0][0], rows[0][1], pts


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def plot_curves(curves: dict[str, str], title: str = "", y_range=(0.0, 1.0), ticks: int = 5) -> str:
    """Render ``{label: csv_text}`` as one polyline per input, with axes and a legend."""
    if not curves:
        raise ValueError("nothing to plot")
    parsed = {k: read_curve_csv(v) for k, v in curves.items()}
    xs = [x for _, _, pts in parsed.values() for x, _ in pts]
    x0, x1 = min(xs), max(xs)
    if x1 == x0:
        x1 = x0 + 1.0
    if y_range is None:
        ys = [y for _, _, pts in parsed.values() for _, y in pts]
        y0, y1 = min(ys), max(ys)
        if y1 <= y0:
            y1 = y0 + 1.0
    else:
        y0, y1 = y_range
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return TOP + (1.0 - (y - y0) / (y1 - y0)) * ph

    xlabel, ylabel = next(iter(parsed.values()))[:2]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>']
    for i in range(ticks + 1):
        gy = y0 + (y1 - y0) * i / ticks
        gx = x0 + (x1 - x0) * i / ticks
        out.append(f'<line class="grid" x1="{LEFT}" y1="{sy(gy):.2f}" x2="{LEFT + pw}" y2="{sy(gy):.2f}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{LEFT - 4}" y="{sy(gy) + 4:.2f}" font-size="10" text-anchor="end">{_fmt(gy)}</text>')
        out.append(f'<text x="{sx(gx):.2f}" y="{TOP + ph + 14}" font-size="10" text-anchor="middle">{_fmt(gx)}</text>')
    out.append(f'<line class="axis" x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>')
    out.append(f'<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{H - 8}" font-size="11" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="12" y="{TOP + ph / 2:.2f}" font-size="11" text-anchor="middle" '
               f'transform="rotate(-90 12 {TOP + ph / 2:.2f})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{W / 2}" y="12" font-size="12" text-anchor="middle">{escape(title)}</text>')
    for k, (label, (_, _, pts)) in enumerate(parsed.items()):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = TOP + 10 + 14 * k
        out.append(f'<g class="legend"><line x1="{LEFT + pw - 110}" y1="{ly}" x2="{LEFT + pw - 94}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/><text x="{LEFT + pw - 90}" y="{ly + 4}" '
                   f'font-size="10">{escape(label)}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
