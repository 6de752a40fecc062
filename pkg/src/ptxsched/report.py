"""Sweep tables and hand-written SVG plots.

The CSV files are the authoritative record; the SVGs are a quick look at
the same numbers. All numbers are formatted with fixed precision so that
identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

SWEEP_COLUMNS = ["alpha", "horizon", "mean_price_eur_mwh", "mean_intensity_gco2_kwh", "total_flh", "status"]
HORIZON_ORDER = ("daily", "monthly", "yearly")
# solid yearly, dashed monthly, dotted daily
DASH = {"yearly": None, "monthly": "8 4", "daily": "2 3"}
COLOR = {"yearly": "#1f4e79", "monthly": "#2e7d32", "daily": "#b23b3b"}

WIDTH, HEIGHT = 640, 440
MARGIN = dict(left=70, right=20, top=30, bottom=55)


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    horizon: str
    mean_price: float
    mean_intensity: float
    total_flh: float
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def sort_rows(rows) -> list[SweepRow]:
    """Order by alpha, then by horizon in daily/monthly/yearly order."""
    rank = {h: i for i, h in enumerate(HORIZON_ORDER)}
    return sorted(rows, key=lambda r: (r.alpha, rank.get(r.horizon, len(rank)), r.horizon))


def _fmt(x: float, digits: int) -> str:
    return "nan" if math.isnan(x) else f"{x:.{digits}f}"


def write_sweep_csv(rows, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in sort_rows(rows):
            w.writerow(
                [
                    f"{r.alpha:.4f}",
                    r.horizon,
                    _fmt(r.mean_price, 6),
                    _fmt(r.mean_intensity, 6),
                    _fmt(r.total_flh, 6),
                    r.status,
                ]
            )


def read_sweep_csv(path: str | Path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        return [
            SweepRow(
                float(d["alpha"]),
                d["horizon"],
                float(d["mean_price_eur_mwh"]),
                float(d["mean_intensity_gco2_kwh"]),
                float(d["total_flh"]),
                d["status"],
            )
            for d in csv.DictReader(fh)
        ]


class _Axes:
    def __init__(self, xs, ys) -> None:
        xs = [x for x in xs if not math.isnan(x)] or [0.0, 1.0]
        ys = [y for y in ys if not math.isnan(y)] or [0.0, 1.0]
        self.x0, self.x1 = self._pad(min(xs), max(xs))
        self.y0, self.y1 = self._pad(min(ys), max(ys))

    @staticmethod
    def _pad(lo: float, hi: float) -> tuple[float, float]:
        span = hi - lo
        pad = 0.05 * span if span > 0 else max(abs(lo) * 0.05, 0.5)
        return lo - pad, hi + pad

    def px(self, x: float) -> float:
        w = WIDTH - MARGIN["left"] - MARGIN["right"]
        return MARGIN["left"] + (x - self.x0) / (self.x1 - self.x0) * w

    def py(self, y: float) -> float:
        h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        return MARGIN["top"] + (self.y1 - y) / (self.y1 - self.y0) * h


def _frame(ax: _Axes, title: str, xlabel: str, ylabel: str) -> list[str]:
    left, top = MARGIN["left"], MARGIN["top"]
    right, bottom = WIDTH - MARGIN["right"], HEIGHT - MARGIN["bottom"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" '
        'fill="none" stroke="#444"/>',
    ]
    for k in range(5):
        xv = ax.x0 + (ax.x1 - ax.x0) * (k + 0.5) / 5
        yv = ax.y0 + (ax.y1 - ax.y0) * (k + 0.5) / 5
        out.append(
            f'<text x="{ax.px(xv):.1f}" y="{bottom + 16}" text-anchor="middle">{xv:.3g}</text>'
        )
        out.append(
            f'<text x="{left - 6}" y="{ax.py(yv) + 4:.1f}" text-anchor="end">{yv:.4g}</text>'
        )
    out.append(
        f'<text x="{(left + right) / 2:.1f}" y="{HEIGHT - 14}" text-anchor="middle">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="16" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(top + bottom) / 2:.1f})">{escape(ylabel)}</text>'
    )
    return out


def _polyline(points, color: str, dash: str | None) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"{dash_attr}/>'


def tradeoff_svg(rows, path: str | Path, title: str = "Price/CO2 trade-off") -> None:
    """Mean intensity against mean price, one curve per horizon, points labelled by alpha."""
    rows = [r for r in sort_rows(rows) if r.ok]
    ax = _Axes([r.mean_price for r in rows], [r.mean_intensity for r in rows])
    out = _frame(ax, title, "mean price paid (EUR/MWh)", "mean CO2 intensity (g/kWh)")
    horizons = [h for h in HORIZON_ORDER if any(r.horizon == h for r in rows)]
    horizons += sorted({r.horizon for r in rows} - set(horizons))
    for k, h in enumerate(horizons):
        curve = [r for r in rows if r.horizon == h]
        color, dash = COLOR.get(h, "#555"), DASH.get(h)
        pts = [(ax.px(r.mean_price), ax.py(r.mean_intensity)) for r in curve]
        out.append(_polyline(pts, color, dash))
        for r, (x, y) in zip(curve, pts):
            out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{color}"/>')
            out.append(
                f'<text x="{x + 4:.2f}" y="{y - 4:.2f}" font-size="9" fill="{color}">{r.alpha:.1f}</text>'
            )
        ly = MARGIN["top"] + 14 + 16 * k
        lx = WIDTH - MARGIN["right"] - 110
        out.append(_polyline([(lx, ly), (lx + 30, ly)], color, dash))
        out.append(f'<text x="{lx + 36}" y="{ly + 4}">{escape(h)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def series_svg(values, path: str | Path, title: str, ylabel: str, xlabel: str = "day") -> None:
    """Single line plot against the index (e.g. the f ratio over a run)."""
    ys = [float(v) for v in values]
    xs = list(range(1, len(ys) + 1))
    ax = _Axes(xs, ys)
    out = _frame(ax, title, xlabel, ylabel)
    pts = [(ax.px(x), ax.py(y)) for x, y in zip(xs, ys) if not math.isnan(y)]
    if pts:
        out.append(_polyline(pts, COLOR["yearly"], None))
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
