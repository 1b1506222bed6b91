"""Minimal static SVG charts: fixed 960x540 viewBox, log axes with decade ticks."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

W, H = 960, 540
LEFT, RIGHT, TOP, BOTTOM = 80, 200, 30, 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _decades(lo: float, hi: float) -> tuple[int, int]:
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    return a, max(b, a + 1)


class _Axes:
    def __init__(self, xlo, xhi, ylo, yhi, xlog: bool):
        self.xlog = xlog
        if xlog:
            self.x0, self.x1 = _decades(xlo, xhi)
        else:
            self.x0, self.x1 = xlo, (xhi if xhi > xlo else xlo + 1)
        self.y0, self.y1 = _decades(ylo, yhi)

    def px(self, x: float) -> float:
        v = math.log10(x) if self.xlog else x
        return LEFT + (v - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)

    def py(self, y: float) -> float:
        return H - BOTTOM - (math.log10(y) - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)

    def frame(self, xlabel: str, ylabel: str) -> list[str]:
        out = [
            f'<rect x="{LEFT}" y="{TOP}" width="{W - LEFT - RIGHT}" height="{H - TOP - BOTTOM}" '
            'fill="none" stroke="#333"/>'
        ]
        for d in range(self.y0, self.y1 + 1):
            y = H - BOTTOM - (d - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
            out.append(f'<line x1="{LEFT - 5}" y1="{y:.2f}" x2="{W - RIGHT}" y2="{y:.2f}" stroke="#ddd"/>')
            out.append(f'<text x="{LEFT - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="12">1e{d}</text>')
        if self.xlog:
            ticks = [(10.0**d, f"1e{d}") for d in range(int(self.x0), int(self.x1) + 1)]
        else:
            step = max(1, math.ceil((self.x1 - self.x0) / 10))
            ticks = [(v, str(v)) for v in range(int(self.x0), int(self.x1) + 1, step)]
        for v, label in ticks:
            x = self.px(v)
            out.append(f'<line x1="{x:.2f}" y1="{H - BOTTOM}" x2="{x:.2f}" y2="{H - BOTTOM + 5}" stroke="#333"/>')
            out.append(f'<text x="{x:.2f}" y="{H - BOTTOM + 20}" text-anchor="middle" font-size="12">{label}</text>')
        out.append(f'<text x="{(LEFT + W - RIGHT) / 2}" y="{H - 15}" text-anchor="middle" font-size="14">'
                   f'{escape(xlabel)}</text>')
        out.append(f'<text x="20" y="{(TOP + H - BOTTOM) / 2}" text-anchor="middle" font-size="14" '
                   f'transform="rotate(-90 20 {(TOP + H - BOTTOM) / 2})">{escape(ylabel)}</text>')
        return out


def _doc(body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}" '
            'font-family="sans-serif">')
    return "\n".join([head, f'<rect width="{W}" height="{H}" fill="white"/>', *body, "</svg>"]) + "\n"


def _legend(names) -> list[str]:
    out = []
    for i, name in enumerate(names):
        y = TOP + 20 + 22 * i
        c = COLORS[i % len(COLORS)]
        out.append(f'<line x1="{W - RIGHT + 15}" y1="{y}" x2="{W - RIGHT + 40}" y2="{y}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{W - RIGHT + 46}" y="{y + 4}" font-size="13">{escape(name)}</text>')
    return out


def _positive(series: dict) -> dict:
    return {k: [(x, y) for x, y in pts if y is not None and y > 0 and math.isfinite(y)] for k, pts in series.items()}


def line_chart(series: dict[str, list[tuple[float, float]]], xlabel: str, ylabel: str) -> str:
    """One polyline per series on a log-y axis; non-positive points are dropped."""
    series = {k: v for k, v in _positive(series).items() if v}
    if not series:
        return _doc(_Axes(0, 1, 0.1, 1, False).frame(xlabel, ylabel))
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    ax = _Axes(min(xs), max(xs), min(ys), max(ys), False)
    body = ax.frame(xlabel, ylabel)
    for i, (name, pts) in enumerate(series.items()):
        coords = " ".join(f"{ax.px(x):.2f},{ax.py(y):.2f}" for x, y in pts)
        body.append(f'<polyline fill="none" stroke="{COLORS[i % len(COLORS)]}" stroke-width="2" points="{coords}"/>')
    return _doc(body + _legend(series))


def loglog_chart(series: dict[str, list[tuple[float, float]]], fits: dict[str, tuple[float, float]],
                 xlabel: str, ylabel: str) -> str:
    """Scatter per series on log-log axes plus a fitted line y = exp(b) x^m for each entry in ``fits``."""
    series = {k: v for k, v in _positive(series).items() if v}
    if not series:
        return _doc(_Axes(1, 10, 0.1, 1, True).frame(xlabel, ylabel))
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    ax = _Axes(min(xs), max(xs), min(ys), max(ys), True)
    body = ax.frame(xlabel, ylabel)
    for i, (name, pts) in enumerate(series.items()):
        c = COLORS[i % len(COLORS)]
        for x, y in pts:
            body.append(f'<circle cx="{ax.px(x):.2f}" cy="{ax.py(y):.2f}" r="4" fill="{c}"/>')
        if name in fits:
            m, b = fits[name]
            xa, xb = min(x for x, _ in pts), max(x for x, _ in pts)
            ya, yb = math.exp(b) * xa**m, math.exp(b) * xb**m
            body.append(f'<line x1="{ax.px(xa):.2f}" y1="{ax.py(ya):.2f}" x2="{ax.px(xb):.2f}" y2="{ax.py(yb):.2f}" '
                        f'stroke="{c}" stroke-dasharray="6 4"/>')
    return _doc(body + _legend(series))
