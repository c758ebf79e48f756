"""Self-contained SVG line plots for curves.csv files."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def read_curves(path: str | Path) -> dict[str, list[float]]:
    """Columns of a curves CSV; the first column is the x axis."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    head, body = rows[0], rows[1:]
    return {h: [float(r[i]) for r in body] for i, h in enumerate(head)}


def line_plot_svg(x: Sequence[float], series: dict[str, Sequence[float]], title: str = "",
                  xlabel: str = "round", ylabel: str = "", width: int = 640,
                  height: int = 400) -> str:
    if not series:
        raise ValueError("nothing to plot")
    ml, mr, mt, mb = 64, 150, 36, 48
    pw, ph = width - ml - mr, height - mt - mb
    x0, x1 = min(x), max(x)
    ys = [v for s in series.values() for v in s]
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + (1 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for i in range(5):
        yv = y0 + (y1 - y0) * i / 4
        xv = x0 + (x1 - x0) * i / 4
        out.append(f'<text x="{ml - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
        out.append(f'<text x="{px(xv):.1f}" y="{mt + ph + 16}" text-anchor="middle">{xv:.4g}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{ml + pw / 2}" y="22" text-anchor="middle" '
                   f'font-size="14">{escape(title)}</text>')
    for k, (name, ys_) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, ys_))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}">'
                   f'<title>{escape(name)}</title></polyline>')
        ly = mt + 14 + 18 * k
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 36}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_curves(paths: Sequence[str | Path], column: str = "win_rate",
                labels: Sequence[str] | None = None, title: str = "") -> str:
    """One polyline per curves file (or per non-x column when a single file is given)."""
    paths = [Path(p) for p in paths]
    series: dict[str, list[float]] = {}
    x: list[float] = []
    if len(paths) == 1:
        cols = read_curves(paths[0])
        xname = next(iter(cols))
        x = cols.pop(xname)
        series = cols
    else:
        for i, p in enumerate(paths):
            cols = read_curves(p)
            xname = next(iter(cols))
            if column not in cols:
                raise ValueError(f"{p}: no column {column!r}")
            name = labels[i] if labels else p.parent.name or p.stem
            if name in series:  # curves files usually share a name, so fall back to the path
                name = str(p.with_suffix(""))
            series[name] = cols[column]
            if len(cols[xname]) > len(x):
                x = cols[xname]
        n = min(len(s) for s in series.values())
        x = x[:n]
        series = {k: v[:n] for k, v in series.items()}
    return line_plot_svg(x, series, title=title, ylabel=column if len(paths) > 1 else "")
