"""Minimal self-contained SVG line charts for run reports.

No plotting dependency: charts are assembled as SVG text directly.  The
output is deterministic (same data, same bytes) and self-contained, so
the files drop into reports or version control without a toolchain.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .rolling import RollingReport
from .series import DailySeries, TimeSeries

__all__ = ["svg_line_chart", "report_chart", "wateruse_chart"]

_PALETTE = ["#1965b0", "#dc050c", "#4eb265", "#f7a35c", "#882e72", "#777777"]
_MARGIN = {"left": 64, "right": 16, "top": 34, "bottom": 42}


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    """Round tick positions covering [lo, hi]."""
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min(s for s in (1.0, 2.0, 2.5, 5.0, 10.0) if s * mag >= raw) * mag
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-9 * step:
        out.append(round(t, 10))
        t += step
    return out or [lo]


def _fmt_num(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return f"{x:g}"


class _Scale:
    def __init__(self, lo: float, hi: float, out_lo: float, out_hi: float):
        if hi <= lo:
            hi = lo + 1.0
        self.lo, self.hi, self.out_lo, self.out_hi = lo, hi, out_lo, out_hi

    def __call__(self, v: float) -> float:
        f = (v - self.lo) / (self.hi - self.lo)
        return self.out_lo + f * (self.out_hi - self.out_lo)


def _polyline_paths(x: np.ndarray, y: np.ndarray, sx: _Scale, sy: _Scale) -> list[str]:
    """One SVG path per finite run (NaN splits the line)."""
    paths, pts = [], []
    for xi, yi in zip(x, y):
        if math.isfinite(yi):
            pts.append(f"{sx(xi):.2f},{sy(yi):.2f}")
        elif pts:
            paths.append("M" + " L".join(pts))
            pts = []
    if pts:
        paths.append("M" + " L".join(pts))
    return paths


def svg_line_chart(
    path: str | Path,
    x: np.ndarray,
    series: dict[str, np.ndarray],
    ribbon: tuple[np.ndarray, np.ndarray] | None = None,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 920,
    height: int = 380,
) -> None:
    """Write a line chart; ``ribbon`` shades between two bound arrays."""
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(v, dtype=float) for v in series.values()]
    stack = list(ys)
    if ribbon is not None:
        stack += [np.asarray(ribbon[0], float), np.asarray(ribbon[1], float)]
    allv = np.concatenate([v[np.isfinite(v)] for v in stack if np.any(np.isfinite(v))])
    y_lo, y_hi = (float(allv.min()), float(allv.max())) if allv.size else (0.0, 1.0)
    pad = 0.05 * (y_hi - y_lo or 1.0)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    sx = _Scale(float(x[0]), float(x[-1]), _MARGIN["left"], width - _MARGIN["right"])
    sy = _Scale(y_lo, y_hi, height - _MARGIN["bottom"], _MARGIN["top"])

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" '
            f'font-size="15">{title}</text>'
        )

    for t in _ticks(y_lo, y_hi):
        yy = sy(t)
        parts.append(
            f'<line x1="{_MARGIN["left"]}" y1="{yy:.2f}" '
            f'x2="{width - _MARGIN["right"]}" y2="{yy:.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_MARGIN["left"] - 6}" y="{yy + 4:.2f}" '
            f'text-anchor="end">{_fmt_num(t)}</text>'
        )
    for t in _ticks(float(x[0]), float(x[-1]), 8):
        xx = sx(t)
        parts.append(
            f'<line x1="{xx:.2f}" y1="{height - _MARGIN["bottom"]}" '
            f'x2="{xx:.2f}" y2="{height - _MARGIN["bottom"] + 4}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{xx:.2f}" y="{height - _MARGIN["bottom"] + 17}" '
            f'text-anchor="middle">{_fmt_num(t)}</text>'
        )
    parts.append(
        f'<rect x="{_MARGIN["left"]}" y="{_MARGIN["top"]}" '
        f'width="{width - _MARGIN["left"] - _MARGIN["right"]}" '
        f'height="{height - _MARGIN["top"] - _MARGIN["bottom"]}" '
        f'fill="none" stroke="#333333"/>'
    )

    if ribbon is not None:
        lo_b, hi_b = np.asarray(ribbon[0], float), np.asarray(ribbon[1], float)
        ok = np.isfinite(lo_b) & np.isfinite(hi_b)
        if np.any(ok):
            upper_pts = [f"{sx(xi):.2f},{sy(v):.2f}" for xi, v in zip(x[ok], hi_b[ok])]
            lower_pts = [
                f"{sx(xi):.2f},{sy(v):.2f}"
                for xi, v in zip(x[ok][::-1], lo_b[ok][::-1])
            ]
            parts.append(
                '<polygon points="'
                + " ".join(upper_pts + lower_pts)
                + '" fill="#1965b0" fill-opacity="0.15" stroke="none"/>'
            )

    legend_x = _MARGIN["left"] + 10
    for i, (name, y) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        for d in _polyline_paths(x, y, sx, sy):
            parts.append(
                f'<path d="{d}" fill="none" stroke="{color}" stroke-width="1.4"/>'
            )
        ly = _MARGIN["top"] + 14 + 16 * i
        parts.append(
            f'<line x1="{legend_x}" y1="{ly - 4}" x2="{legend_x + 22}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{legend_x + 28}" y="{ly}">{name}</text>')

    if xlabel:
        parts.append(
            f'<text x="{width / 2:.0f}" y="{height - 8}" '
            f'text-anchor="middle">{xlabel}</text>'
        )
    if ylabel:
        parts.append(
            f'<text x="16" y="{height / 2:.0f}" text-anchor="middle" '
            f'transform="rotate(-90 16 {height / 2:.0f})">{ylabel}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def report_chart(
    report: RollingReport, path: str | Path, observed: TimeSeries | None = None
) -> None:
    """Hourly forecast with its uncertainty ribbon (hours on the x-axis)."""
    n = len(report.prediction)
    x = np.arange(n) * report.prediction.step_hours
    series = {"predicted": report.prediction.values}
    if observed is not None:
        lo = observed.index_of(report.prediction.start)
        series = {"observed": observed.values[lo : lo + n], **series}
    svg_line_chart(
        path,
        x,
        series,
        ribbon=(report.lower.values, report.upper.values),
        title="Standard-tree sap flux forecast",
        xlabel="hours since evaluation start",
        ylabel="sap flux density",
    )


def wateruse_chart(
    report: RollingReport, path: str | Path, observed: DailySeries | None = None
) -> None:
    """Daily liters with the propagated uncertainty band."""
    wu = report.water_use.liters
    x = np.arange(len(wu), dtype=float)
    series = {"predicted": wu.values}
    if observed is not None:
        k0 = (wu.start_day - observed.start_day).days
        series = {"observed": observed.values[k0 : k0 + len(wu)], **series}
    svg_line_chart(
        path,
        x,
        series,
        ribbon=(report.water_lower.values, report.water_upper.values),
        title="Daily group water-use forecast",
        xlabel="day of evaluation span",
        ylabel="liters",
    )
