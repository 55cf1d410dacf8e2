"""Minimal SVG line plots (axes, ticks, legend, polylines)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
          "#7f7f7f", "#bcbd22", "#17becf"]


def _ticks(lo: float, hi: float, count: int = 5) -> list:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def line_plot(series, path, title: str = "", xlabel: str = "", ylabel: str = "",
              logy: bool = False, width: int = 640, height: int = 400) -> None:
    """Write ``series`` (iterable of (label, xs, ys)) as an SVG line chart."""
    series = [(str(lab), np.asarray(xs, float), np.asarray(ys, float)) for lab, xs, ys in series]
    if logy:
        series = [(lab, xs, np.log10(np.maximum(np.abs(ys), 1e-300))) for lab, xs, ys in series]
    finite = [(xs[np.isfinite(ys)], ys[np.isfinite(ys)]) for _, xs, ys in series]
    xmin = min((xs.min() for xs, _ in finite if xs.size), default=0.0)
    xmax = max((xs.max() for xs, _ in finite if xs.size), default=1.0)
    ymin = min((ys.min() for _, ys in finite if ys.size), default=0.0)
    ymax = max((ys.max() for _, ys in finite if ys.size), default=1.0)
    if xmax == xmin:
        xmax = xmin + 1.0
    if ymax == ymin:
        ymin, ymax = ymin - 1.0, ymax + 1.0
    left, right, top, bottom = 70, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom

    def sx(v):
        return left + (v - xmin) / (xmax - xmin) * pw

    def sy(v):
        return top + ph - (v - ymin) / (ymax - ymin) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">'
        f"{escape(title)}</text>",
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for tx in _ticks(xmin, xmax):
        X = sx(tx)
        out.append(f'<line x1="{X:.1f}" y1="{top + ph}" x2="{X:.1f}" y2="{top + ph + 4}" '
                   'stroke="black"/>')
        out.append(f'<text x="{X:.1f}" y="{top + ph + 16}" text-anchor="middle">{tx:g}</text>')
    for ty in _ticks(ymin, ymax):
        Y = sy(ty)
        label = f"1e{ty:g}" if logy else f"{ty:g}"
        out.append(f'<line x1="{left - 4}" y1="{Y:.1f}" x2="{left}" y2="{Y:.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{Y + 4:.1f}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">'
               f"{escape(xlabel)}</text>")
    out.append(f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 15 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for k, (lab, xs, ys) in enumerate(series):
        color = COLORS[k % len(COLORS)]
        ok = np.isfinite(ys)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs[ok], ys[ok]))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 14 * k
        out.append(f'<line x1="{left + pw - 110}" y1="{ly - 4}" x2="{left + pw - 90}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 85}" y="{ly}">{escape(lab)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
