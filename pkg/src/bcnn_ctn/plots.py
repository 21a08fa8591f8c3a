"""Self-contained SVG line plots and heatmaps.

Axes are fixed by the caller (``x_range``/``y_range``) so files are
comparable across runs. Output is deterministic text.
"""

from __future__ import annotations

from html import escape

import numpy as np

W, H = 480, 360
LEFT, RIGHT, TOP, BOTTOM = 60, 20, 40, 50
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_plot_svg(series: dict[str, list[tuple[float, float]]], xlabel: str, ylabel: str, title: str,
                  x_range: tuple[float, float] | None = None, y_range: tuple[float, float] | None = None,
                  diagonal: bool = False) -> str:
    pts = [p for s in series.values() for p in s]
    xs = [p[0] for p in pts] or [0.0, 1.0]
    ys = [p[1] for p in pts] or [0.0, 1.0]
    x0, x1 = x_range or (min(xs), max(xs))
    y0, y1 = y_range or (min(ys), max(ys))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return TOP + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in np.linspace(0, 1, 5):
        xv, yv = x0 + t * (x1 - x0), y0 + t * (y1 - y0)
        out.append(f'<text x="{_fmt(sx(xv))}" y="{TOP + ph + 15}" text-anchor="middle" font-size="10">{xv:.3g}</text>')
        out.append(f'<text x="{LEFT - 5}" y="{_fmt(sy(yv) + 3)}" text-anchor="end" font-size="10">{yv:.3g}</text>')
    out.append(f'<text x="{LEFT + pw / 2}" y="{H - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{TOP + ph / 2}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 15 {TOP + ph / 2})">{escape(ylabel)}</text>')
    if diagonal:
        out.append(f'<line x1="{_fmt(sx(x0))}" y1="{_fmt(sy(y0))}" x2="{_fmt(sx(x1))}" y2="{_fmt(sy(y1))}" '
                   f'stroke="#999" stroke-dasharray="4 3"/>')
    for i, (name, s) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        path = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in s)
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{path}"/>')
        ly = TOP + 12 + 14 * i
        out.append(f'<line x1="{LEFT + pw - 110}" y1="{ly}" x2="{LEFT + pw - 95}" y2="{ly}" stroke="{colour}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw - 90}" y="{ly + 4}" font-size="10">{escape(name)}</text>')
    out.append("</svg>\n")
    return "\n".join(out)


def heatmap_svg(matrix: np.ndarray, labels: list[str], title: str) -> str:
    """Confusion-matrix style heatmap; rows are true classes, columns predictions."""
    m = np.asarray(matrix, dtype=float)
    k = m.shape[0]
    cell = min(40, (min(W, H) - 120) // max(k, 1))
    size = LEFT + cell * k + 40
    peak = m.max() if m.max() > 0 else 1.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}" '
           f'viewBox="0 0 {size} {size + 20}">',
           f'<rect width="{size}" height="{size + 20}" fill="white"/>',
           f'<text x="{size / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>']
    for i in range(k):
        for j in range(k):
            shade = int(round(255 * (1 - m[i, j] / peak)))
            x, y = LEFT + j * cell, TOP + i * cell
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                       f'fill="rgb({shade},{shade},255)" stroke="white"/>')
            val = f"{m[i, j]:.0f}" if float(m[i, j]).is_integer() else f"{m[i, j]:.2f}"
            out.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                       f'font-size="9">{val}</text>')
        out.append(f'<text x="{LEFT - 4}" y="{TOP + i * cell + cell / 2 + 4}" text-anchor="end" '
                   f'font-size="9">{escape(labels[i])}</text>')
    out.append(f'<text x="{LEFT + cell * k / 2}" y="{TOP + cell * k + 16}" text-anchor="middle" '
               f'font-size="11">predicted</text>')
    out.append("</svg>\n")
    return "\n".join(out)
