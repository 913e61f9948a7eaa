"""Minimal self-contained SVG charts (bars, lines, scatter)."""

from __future__ import annotations

import math
from html import escape

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#7f7f7f")

W, H = 480, 320
LEFT, RIGHT, TOP, BOTTOM = 60, 20, 36, 56


def _num(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, k: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / k
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = math.floor(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12:
        if v >= lo - 1e-12:
            out.append(round(v, 10))
        v += step
    return out


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str, xlim, ylim):
        self.parts: list[str] = []
        self.xlim = xlim
        self.ylim = ylim
        self.parts.append(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
            'font-family="sans-serif" font-size="11">'
        )
        self.parts.append(f'<rect width="{W}" height="{H}" fill="white"/>')
        self.parts.append(f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
        self.parts.append(
            f'<text x="{(LEFT + W - RIGHT) / 2}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>'
        )
        cy = (TOP + H - BOTTOM) / 2
        self.parts.append(
            f'<text x="14" y="{cy}" text-anchor="middle" transform="rotate(-90 14 {cy})">{escape(ylabel)}</text>'
        )
        self.parts.append(
            f'<rect x="{LEFT}" y="{TOP}" width="{W - LEFT - RIGHT}" height="{H - TOP - BOTTOM}" '
            'fill="none" stroke="#333"/>'
        )

    def sx(self, x: float) -> float:
        lo, hi = self.xlim
        return LEFT + (x - lo) / (hi - lo) * (W - LEFT - RIGHT)

    def sy(self, y: float) -> float:
        lo, hi = self.ylim
        return H - BOTTOM - (y - lo) / (hi - lo) * (H - TOP - BOTTOM)

    def yaxis(self):
        for v in _ticks(*self.ylim):
            y = self.sy(v)
            self.parts.append(f'<line x1="{LEFT - 4}" x2="{LEFT}" y1="{_num(y)}" y2="{_num(y)}" stroke="#333"/>')
            self.parts.append(f'<text x="{LEFT - 6}" y="{_num(y + 4)}" text-anchor="end">{v:g}</text>')

    def xaxis(self):
        for v in _ticks(*self.xlim):
            x = self.sx(v)
            y0 = H - BOTTOM
            self.parts.append(f'<line x1="{_num(x)}" x2="{_num(x)}" y1="{y0}" y2="{y0 + 4}" stroke="#333"/>')
            self.parts.append(f'<text x="{_num(x)}" y="{y0 + 16}" text-anchor="middle">{v:g}</text>')

    def legend(self, labels):
        for k, label in enumerate(labels):
            y = TOP + 12 + 14 * k
            x = W - RIGHT - 120
            self.parts.append(f'<rect x="{x}" y="{y - 8}" width="10" height="10" fill="{PALETTE[k % len(PALETTE)]}"/>')
            self.parts.append(f'<text x="{x + 14}" y="{y + 1}">{escape(str(label))}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def bar_chart(title, categories, series: dict[str, list[float]], ylabel="", xlabel="") -> str:
    """Grouped bars: one group per category, one bar per series."""
    values = [v for vs in series.values() for v in vs if v is not None and math.isfinite(v)]
    top = max(values + [0.0]) * 1.1 or 1.0
    low = min(values + [0.0])
    c = _Canvas(title, xlabel, ylabel, (0.0, float(len(categories))), (low, top))
    c.yaxis()
    k = len(series)
    width = 0.8 / max(k, 1)
    for s, (label, vs) in enumerate(series.items()):
        color = PALETTE[s % len(PALETTE)]
        for i, v in enumerate(vs):
            if v is None or not math.isfinite(v):
                continue
            x0 = c.sx(i + 0.1 + s * width)
            x1 = c.sx(i + 0.1 + (s + 1) * width)
            y0, y1 = c.sy(max(v, 0.0)), c.sy(min(v, 0.0))
            c.parts.append(
                f'<rect x="{_num(x0)}" y="{_num(y0)}" width="{_num(x1 - x0)}" height="{_num(y1 - y0)}" fill="{color}"/>'
            )
    for i, cat in enumerate(categories):
        c.parts.append(
            f'<text x="{_num(c.sx(i + 0.5))}" y="{H - BOTTOM + 16}" text-anchor="middle">{escape(str(cat))}</text>'
        )
    if k > 1:
        c.legend(series)
    return c.render()


def line_chart(title, series: dict[str, tuple[list[float], list[float]]], xlabel="", ylabel="", xlim=None, ylim=None, diagonal=False) -> str:
    xs = [x for xv, _ in series.values() for x in xv]
    ys = [y for _, yv in series.values() for y in yv if math.isfinite(y)]
    xlim = xlim or (min(xs), max(xs))
    ylim = ylim or (min(ys), max(ys) if max(ys) > min(ys) else min(ys) + 1)
    c = _Canvas(title, xlabel, ylabel, xlim, ylim)
    c.xaxis()
    c.yaxis()
    if diagonal:
        lo = max(xlim[0], ylim[0])
        hi = min(xlim[1], ylim[1])
        c.parts.append(
            f'<line x1="{_num(c.sx(lo))}" y1="{_num(c.sy(lo))}" x2="{_num(c.sx(hi))}" y2="{_num(c.sy(hi))}" '
            'stroke="#999" stroke-dasharray="4 3"/>'
        )
    for s, (label, (xv, yv)) in enumerate(series.items()):
        pts = " ".join(
            f"{_num(c.sx(x))},{_num(c.sy(min(max(y, ylim[0]), ylim[1])))}" for x, y in zip(xv, yv) if math.isfinite(y)
        )
        c.parts.append(f'<polyline points="{pts}" fill="none" stroke="{PALETTE[s % len(PALETTE)]}" stroke-width="1.5"/>')
    c.legend(series)
    return c.render()


def scatter(title, x, y, xlabel="", ylabel="") -> str:
    pad_x = (max(x) - min(x)) * 0.05 or 1.0
    pad_y = (max(y) - min(y)) * 0.05 or 1.0
    c = _Canvas(title, xlabel, ylabel, (min(x) - pad_x, max(x) + pad_x), (min(y) - pad_y, max(y) + pad_y))
    c.xaxis()
    c.yaxis()
    for a, b in zip(x, y):
        c.parts.append(f'<circle cx="{_num(c.sx(a))}" cy="{_num(c.sy(b))}" r="3" fill="{PALETTE[0]}"/>')
    return c.render()
