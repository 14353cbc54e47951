"""Minimal hand-rolled SVG line charts.

Deliberately dependency-free and byte-deterministic: fixed float formatting,
no timestamps, no generated ids, so chart files hash identically across runs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

_WIDTH, _HEIGHT = 720, 440
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 60, 20, 36, 46
_COLORS = ("#1f6fb4", "#d1342f", "#2b8a3e", "#946bb5", "#c77f1e", "#47838a")


def _fmt(v: float) -> str:
    return format(v, ".2f")


class _Frame:
    def __init__(self, xs_all, ys_all):
        self.x_lo, self.x_hi = min(xs_all), max(xs_all)
        self.y_lo, self.y_hi = min(ys_all), max(ys_all)
        if self.x_hi == self.x_lo:
            self.x_hi = self.x_lo + 1.0
        pad = (self.y_hi - self.y_lo) * 0.05 or 0.05
        self.y_lo -= pad
        self.y_hi += pad

    def x(self, v: float) -> float:
        span = _WIDTH - _MARGIN_L - _MARGIN_R
        return _MARGIN_L + (v - self.x_lo) / (self.x_hi - self.x_lo) * span

    def y(self, v: float) -> float:
        span = _HEIGHT - _MARGIN_T - _MARGIN_B
        return _HEIGHT - _MARGIN_B - (v - self.y_lo) / (self.y_hi - self.y_lo) * span


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def line_chart_svg(
    path: str | Path,
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str,
    x_label: str,
    y_label: str,
) -> None:
    """Write a line chart; series is a list of (label, xs, ys)."""
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    frame = _Frame(xs_all, ys_all)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH // 2}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{title}</text>',
    ]
    # axes
    x0, y0 = _MARGIN_L, _HEIGHT - _MARGIN_B
    x1, y1 = _WIDTH - _MARGIN_R, _MARGIN_T
    parts.append(
        f'<path d="M {x0} {y1} L {x0} {y0} L {x1} {y0}" stroke="#444" fill="none"/>'
    )
    for tx in _ticks(frame.x_lo, frame.x_hi):
        px = frame.x(tx)
        parts.append(f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}" y2="{y0 + 4}" stroke="#444"/>')
        parts.append(
            f'<text x="{_fmt(px)}" y="{y0 + 18}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="11">{tx:g}</text>'
        )
    for ty in _ticks(frame.y_lo, frame.y_hi):
        py = frame.y(ty)
        parts.append(f'<line x1="{x0 - 4}" y1="{_fmt(py)}" x2="{x0}" y2="{_fmt(py)}" stroke="#444"/>')
        parts.append(
            f'<text x="{x0 - 8}" y="{_fmt(py + 4)}" text-anchor="end" font-family="sans-serif" '
            f'font-size="11">{ty:.3f}</text>'
        )
    parts.append(
        f'<text x="{(x0 + x1) // 2}" y="{_HEIGHT - 8}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>'
    )
    parts.append(
        f'<text x="14" y="{(y0 + y1) // 2}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 14 {(y0 + y1) // 2})">{y_label}</text>'
    )
    # series
    for i, (label, xs, ys) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{_fmt(frame.x(x))},{_fmt(frame.y(y))}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = _MARGIN_T + 14 + 16 * i
        lx = _WIDTH - _MARGIN_R - 150
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text x="{lx + 28}" y="{ly}" font-family="sans-serif" font-size="11">{label}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
