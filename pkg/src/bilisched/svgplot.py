"""Minimal pure-text SVG line plots: polylines, CI bands, ticks, labels.

No external renderer; the output is a standalone SVG document string.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

__all__ = ["LineSeries", "render_line_plot"]

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
_WIDTH, _HEIGHT = 640, 420
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 70, 20, 40, 50


class LineSeries:
    """One plotted line with an optional shaded confidence band."""

    def __init__(self, label: str, x: Sequence[float], y: Sequence[float],
                 lo: Optional[Sequence[float]] = None, hi: Optional[Sequence[float]] = None):
        if len(x) != len(y) or not len(x):
            raise ValueError("series needs matching nonempty x and y")
        if (lo is None) != (hi is None):
            raise ValueError("band needs both bounds")
        if lo is not None and (len(lo) != len(x) or len(hi) != len(x)):
            raise ValueError("band length mismatch")
        self.label = label
        self.x = [float(v) for v in x]
        self.y = [float(v) for v in y]
        self.lo = None if lo is None else [float(v) for v in lo]
        self.hi = None if hi is None else [float(v) for v in hi]


def _ticks(lo: float, hi: float, count: int = 6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(count - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 10))
        v += step
    return ticks


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:g}"


def render_line_plot(series: Sequence[LineSeries], title: str = "",
                     xlabel: str = "", ylabel: str = "") -> str:
    """Render series to one SVG document; raises on empty input."""
    if not series:
        raise ValueError("nothing to plot")
    xs = [v for s in series for v in s.x]
    ys = [v for s in series for v in s.y]
    for s in series:
        if s.lo is not None:
            ys.extend(s.lo)
            ys.extend(s.hi)
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
    plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B

    def sx(v):
        return _MARGIN_L + (v - x_lo) / (x_hi - x_lo) * plot_w

    def sy(v):
        return _MARGIN_T + (y_hi - v) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#333" stroke-width="1"/>',
    ]
    if title:
        parts.append(f'<text x="{_WIDTH / 2:.1f}" y="24" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="15">{title}</text>')

    for v in _ticks(x_lo, x_hi):
        if v < x_lo - 1e-9 or v > x_hi + 1e-9:
            continue
        px = sx(v)
        parts.append(f'<line x1="{px:.1f}" y1="{_MARGIN_T + plot_h}" x2="{px:.1f}" '
                     f'y2="{_MARGIN_T + plot_h + 5}" stroke="#333"/>')
        parts.append(f'<text x="{px:.1f}" y="{_MARGIN_T + plot_h + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{_fmt(v)}</text>')
    for v in _ticks(y_lo, y_hi):
        if v < y_lo - 1e-9 or v > y_hi + 1e-9:
            continue
        py = sy(v)
        parts.append(f'<line x1="{_MARGIN_L - 5}" y1="{py:.1f}" x2="{_MARGIN_L}" '
                     f'y2="{py:.1f}" stroke="#333"/>')
        parts.append(f'<text x="{_MARGIN_L - 8}" y="{py + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{_fmt(v)}</text>')
    if xlabel:
        parts.append(f'<text x="{_MARGIN_L + plot_w / 2:.1f}" y="{_HEIGHT - 12}" '
                     f'text-anchor="middle" font-family="sans-serif" font-size="13">{xlabel}</text>')
    if ylabel:
        cy = _MARGIN_T + plot_h / 2
        parts.append(f'<text x="16" y="{cy:.1f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="13" '
                     f'transform="rotate(-90 16 {cy:.1f})">{ylabel}</text>')

    for idx, s in enumerate(series):
        color = _COLORS[idx % len(_COLORS)]
        if s.lo is not None:
            upper = " ".join(f"{sx(x):.2f},{sy(v):.2f}" for x, v in zip(s.x, s.hi))
            lower = " ".join(f"{sx(x):.2f},{sy(v):.2f}" for x, v in zip(reversed(s.x), reversed(s.lo)))
            parts.append(f'<polygon points="{upper} {lower}" fill="{color}" '
                         f'fill-opacity="0.18" stroke="none"/>')
        pts = " ".join(f"{sx(x):.2f},{sy(v):.2f}" for x, v in zip(s.x, s.y))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        ly = _MARGIN_T + 16 + 16 * idx
        lx = _MARGIN_L + plot_w - 150
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 28}" y="{ly}" font-family="sans-serif" '
                     f'font-size="12">{s.label}</text>')

    parts.append("</svg>")
    return "\n".join(parts)
