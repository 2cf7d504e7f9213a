"""Error summaries, real-vs-synthetic histogram distances and SVG figures."""

from __future__ import annotations

import html
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import RoomPolygon
from .spectra import CHANNELS, Dataset, Spectrum

DEFAULT_BINS = 50


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorSummary:
    mean_euclidean_cm: float
    median_cm: float
    p90_cm: float
    per_rp: tuple[tuple[int, float, int], ...]  # (rp_id, mean cm, count)
    n: int

    def as_rows(self) -> list[tuple[str, float]]:
        return [("mean_euclidean_cm", self.mean_euclidean_cm), ("median_cm", self.median_cm),
                ("p90_cm", self.p90_cm), ("n", float(self.n))]


def percentile_linear(values: Sequence[float], q: float) -> float:
    """Linear interpolation between order statistics at rank q/100 * (n - 1)."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ReportError("percentile of an empty sample")
    rank = q / 100.0 * (v.size - 1)
    lo = int(math.floor(rank))
    hi = min(lo + 1, v.size - 1)
    return float(v[lo] + (rank - lo) * (v[hi] - v[lo]))


def summarize_errors(errors: Sequence[float], rp_ids: Sequence[int | None]) -> ErrorSummary:
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ReportError("cannot summarize an empty test set")
    groups: dict[int, list[float]] = {}
    for err, rp in zip(e, rp_ids):
        groups.setdefault(-1 if rp is None else int(rp), []).append(float(err))
    per_rp = tuple((rp, float(np.mean(v)), len(v)) for rp, v in sorted(groups.items()))
    return ErrorSummary(float(np.mean(e)), percentile_linear(e, 50), percentile_linear(e, 90),
                        per_rp, int(e.size))


def prediction_errors(pred_cm: np.ndarray, test: Dataset) -> np.ndarray:
    return np.hypot(*(np.asarray(pred_cm) - test.positions()).T)


def error_summary(model, test: Dataset) -> ErrorSummary:
    """Euclidean error statistics of ``model`` on ``test``; per-RP groups by rp_id."""
    from .localizer import predict_many

    if len(test) == 0:
        raise ReportError("cannot evaluate on an empty test set")
    return summarize_errors(prediction_errors(predict_many(model, test.features()), test),
                            test.rp_ids())


@dataclass(frozen=True)
class HistogramPair:
    channel: str
    edges: tuple[float, ...]
    real_counts: tuple[int, ...]
    synth_counts: tuple[int, ...]
    tv_distance: float
    wasserstein1: float


def wasserstein1(a: np.ndarray, b: np.ndarray) -> float:
    """Earth mover's distance between two empirical 1-D samples."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    allv = np.concatenate([a, b])
    allv.sort(kind="mergesort")
    deltas = np.diff(allv)
    cdf_a = np.searchsorted(a, allv[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, allv[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


def _column(spectra, channel: int) -> np.ndarray:
    if isinstance(spectra, np.ndarray):
        return np.asarray(spectra, dtype=np.float64)[:, channel]
    return np.array([s.channels[channel] for s in spectra], dtype=np.float64)


def histogram_distance(real: Sequence[Spectrum] | np.ndarray, synth: Sequence[Spectrum] | np.ndarray,
                       channel: str | int, bins: int = DEFAULT_BINS) -> HistogramPair:
    """Binned total variation and bin-free Wasserstein-1 for one channel.

    Bins are uniform over the union of both samples' ranges. A zero-width
    range collapses into a single occupied bin.
    """
    c = CHANNELS.index(channel) if isinstance(channel, str) else int(channel)
    a, b = _column(real, c), _column(synth, c)
    if a.size == 0 or b.size == 0:
        raise ReportError("histogram_distance needs non-empty samples")
    lo, hi = float(min(a.min(), b.min())), float(max(a.max(), b.max()))
    if hi > lo:
        edges = np.linspace(lo, hi, bins + 1)
    else:
        edges = np.linspace(lo - 0.5, lo + 0.5, bins + 1)
    ca, _ = np.histogram(a, edges)
    cb, _ = np.histogram(b, edges)
    tv = 0.5 * float(np.sum(np.abs(ca / a.size - cb / b.size)))
    return HistogramPair(CHANNELS[c], tuple(edges.tolist()), tuple(int(v) for v in ca),
                         tuple(int(v) for v in cb), tv, wasserstein1(a, b))


def write_histogram_csv(h: HistogramPair, path: str | Path) -> None:
    lines = ["bin_lo,bin_hi,real,synth"]
    for i in range(len(h.real_counts)):
        lines.append(f"{h.edges[i]!r},{h.edges[i + 1]!r},{h.real_counts[i]},{h.synth_counts[i]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_summary_csv(rows: Sequence[tuple[str, object]], path: str | Path) -> None:
    lines = ["metric,value"] + [f"{k},{_cell(v)}" for k, v in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_per_rp_csv(summary: ErrorSummary, path: str | Path) -> None:
    lines = ["rp_id,mean_cm,n"] + [f"{rp},{m!r},{n}" for rp, m, n in summary.per_rp]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cell(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# ---- SVG ----

_MARGIN = 30.0


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    """Maps room cm to SVG user units with y pointing north."""

    def __init__(self, bbox: tuple[float, float, float, float], scale: float = 0.8,
                 extra_right: float = 0.0) -> None:
        self.xmin, self.ymin, self.xmax, self.ymax = bbox
        self.scale = scale
        self.width = (self.xmax - self.xmin) * scale + 2 * _MARGIN + extra_right
        self.height = (self.ymax - self.ymin) * scale + 2 * _MARGIN

    def x(self, v: float) -> float:
        return _MARGIN + (v - self.xmin) * self.scale

    def y(self, v: float) -> float:
        return _MARGIN + (self.ymax - v) * self.scale

    def header(self, title: str) -> list[str]:
        return [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(self.width)}" '
            f'height="{_fmt(self.height)}" viewBox="0 0 {_fmt(self.width)} {_fmt(self.height)}">',
            f"<title>{html.escape(title)}</title>",
            f'<rect x="0" y="0" width="{_fmt(self.width)}" height="{_fmt(self.height)}" fill="white"/>',
        ]

    def polygon(self, poly: RoomPolygon, fill: str = "none") -> str:
        pts = " ".join(f"{_fmt(self.x(x))},{_fmt(self.y(y))}" for x, y in poly.vertices)
        return f'<polygon points="{pts}" fill="{fill}" stroke="black" stroke-width="1.5"/>'


def _bbox_with(poly: RoomPolygon, pts: np.ndarray) -> tuple[float, float, float, float]:
    xmin, ymin, xmax, ymax = poly.bbox()
    if len(pts):
        xmin, ymin = min(xmin, float(pts[:, 0].min())), min(ymin, float(pts[:, 1].min()))
        xmax, ymax = max(xmax, float(pts[:, 0].max())), max(ymax, float(pts[:, 1].max()))
    return xmin, ymin, xmax, ymax


def scatter_svg_arrays(truth: np.ndarray, pred: np.ndarray, room: RoomPolygon,
                       path: str | Path, title: str = "Truth (blue) vs prediction (red)") -> None:
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    cv = _Canvas(_bbox_with(room, np.vstack([truth, pred])))
    out = cv.header(title)
    out.append(cv.polygon(room))
    for (tx, ty), (px, py) in zip(truth, pred):
        out.append(f'<line x1="{_fmt(cv.x(tx))}" y1="{_fmt(cv.y(ty))}" x2="{_fmt(cv.x(px))}" '
                   f'y2="{_fmt(cv.y(py))}" stroke="#999999" stroke-width="0.5"/>')
    for tx, ty in truth:
        out.append(f'<circle class="truth" cx="{_fmt(cv.x(tx))}" cy="{_fmt(cv.y(ty))}" r="3" '
                   f'fill="blue"/>')
    for px, py in pred:
        out.append(f'<circle class="pred" cx="{_fmt(cv.x(px))}" cy="{_fmt(cv.y(py))}" r="2" '
                   f'fill="red" fill-opacity="0.6"/>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def scatter_svg(model, test: Dataset, room: RoomPolygon, path: str | Path) -> None:
    from .localizer import predict_many

    scatter_svg_arrays(test.positions(), predict_many(model, test.features()), room, path)


def ramp_color(t: float) -> str:
    """White to dark red, monotone in t on [0, 1]."""
    t = min(1.0, max(0.0, t))
    r = round(255 - 115 * t)
    g = round(255 - 255 * t)
    b = round(255 - 255 * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(report, room: RoomPolygon, path: str | Path,
                title: str = "Pseudo-label density") -> None:
    """Density grid of kept pseudo-labels over the room outline, with a legend.

    Cell colour is count / max count on a white-to-red ramp; an all-zero grid
    renders every cell white.
    """
    grid = np.asarray(report.density, dtype=np.int64)
    x0, y0 = report.grid_origin
    cell = report.cell_cm
    ny, nx = grid.shape
    bbox = (min(x0, room.bbox()[0]), min(y0, room.bbox()[1]),
            max(x0 + nx * cell, room.bbox()[2]), max(y0 + ny * cell, room.bbox()[3]))
    cv = _Canvas(bbox, extra_right=90.0)
    out = cv.header(title)
    peak = int(grid.max()) if grid.size else 0
    for j in range(ny):
        for i in range(nx):
            count = int(grid[j, i])
            color = ramp_color(count / peak if peak > 0 else 0.0)
            out.append(f'<rect x="{_fmt(cv.x(x0 + i * cell))}" y="{_fmt(cv.y(y0 + (j + 1) * cell))}" '
                       f'width="{_fmt(cell * cv.scale)}" height="{_fmt(cell * cv.scale)}" '
                       f'fill="{color}" data-count="{count}"/>')
    out.append(cv.polygon(room))
    lx = cv.width - 80.0
    out.append(f'<text x="{_fmt(lx)}" y="{_fmt(_MARGIN - 8)}" font-size="10">count</text>')
    steps = 5
    for k in range(steps + 1):
        t = k / steps
        yy = _MARGIN + (steps - k) * 20.0
        out.append(f'<rect x="{_fmt(lx)}" y="{_fmt(yy)}" width="16" height="20" '
                   f'fill="{ramp_color(t)}" stroke="#666666" stroke-width="0.5"/>')
        out.append(f'<text x="{_fmt(lx + 22)}" y="{_fmt(yy + 14)}" font-size="10">'
                   f'{_fmt(t * peak)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
