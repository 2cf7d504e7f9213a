"""Room polygon, point-in-polygon test and reference-point layout."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .spectra import Position

# default U: 6 m x 8 m box minus a notch open to the north
DEFAULT_EXTENT = (600.0, 800.0)
DEFAULT_NOTCH = ((200.0, 300.0), (400.0, 800.0))
DEFAULT_GRID = {"x0": 50.0, "y0": 50.0, "dx": 100.0, "dy": 85.0}


class GeometryError(ValueError):
    pass


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p) -> bool:
    return (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))


def segments_intersect(p1, p2, q1, q2) -> bool:
    d1, d2 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    d3, d4 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and d1 != 0 and d2 != 0 and \
       ((d3 > 0) != (d4 > 0)) and d3 != 0 and d4 != 0:
        return True
    return ((d1 == 0 and _on_segment(q1, q2, p1)) or (d2 == 0 and _on_segment(q1, q2, p2))
            or (d3 == 0 and _on_segment(p1, p2, q1)) or (d4 == 0 and _on_segment(p1, p2, q2)))


@dataclass(frozen=True)
class RoomPolygon:
    """Simple counter-clockwise polygon in cm."""

    vertices: tuple[tuple[float, float], ...]
    extent: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        n = len(verts)
        if n < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        if not np.all(np.isfinite(np.array(verts))):
            raise GeometryError("polygon vertices must be finite")
        for i in range(n):
            if verts[i] == verts[(i + 1) % n]:
                raise GeometryError(f"consecutive vertices {i} and {(i + 1) % n} are equal")
        for i in range(n):
            for j in range(i + 1, n):
                # adjacent edges share an endpoint by construction
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if segments_intersect(verts[i], verts[(i + 1) % n],
                                      verts[j], verts[(j + 1) % n]):
                    raise GeometryError(f"edges {i} and {j} intersect")
        if self.signed_area() <= 0:
            raise GeometryError("polygon vertices must be counter-clockwise")
        if self.extent is not None:
            xmin, ymin, xmax, ymax = self.bbox()
            if xmin < 0 or ymin < 0 or xmax > self.extent[0] or ymax > self.extent[1]:
                raise GeometryError(f"polygon does not fit within room extent {self.extent}")

    def signed_area(self) -> float:
        v = self.vertices
        return 0.5 * sum(v[i][0] * v[(i + 1) % len(v)][1] - v[(i + 1) % len(v)][0] * v[i][1]
                         for i in range(len(v)))

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.vertices]
        ys = [p[1] for p in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)


def on_boundary(poly: RoomPolygon, x: float, y: float) -> bool:
    v = poly.vertices
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        if _orient(a, b, (x, y)) == 0 and _on_segment(a, b, (x, y)):
            return True
    return False


def contains(poly: RoomPolygon, p: Position | tuple[float, float]) -> bool:
    """Even-odd ray casting; points on the boundary count as inside."""
    x, y = (p.x, p.y) if isinstance(p, Position) else (float(p[0]), float(p[1]))
    if on_boundary(poly, x, y):
        return True
    inside = False
    v = poly.vertices
    n = len(v)
    for i in range(n):
        (x1, y1), (x2, y2) = v[i], v[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def contains_many(poly: RoomPolygon, pts: np.ndarray) -> np.ndarray:
    """Vectorised ``contains`` over an (n, 2) array."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    boundary = np.zeros(len(pts), dtype=bool)
    v = poly.vertices
    n = len(v)
    for i in range(n):
        (x1, y1), (x2, y2) = v[i], v[(i + 1) % n]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        within = ((np.minimum(x1, x2) <= x) & (x <= np.maximum(x1, x2))
                  & (np.minimum(y1, y2) <= y) & (y <= np.maximum(y1, y2)))
        boundary |= (cross == 0) & within
        straddle = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddle & (x < x_cross)
    return inside | boundary


@dataclass(frozen=True)
class ReferenceLayout:
    points: tuple[Position, ...]
    spacing_cm: float = 100.0
    generated: bool = True

    def __len__(self) -> int:
        return len(self.points)

    def validate(self, poly: RoomPolygon) -> None:
        if len(set((p.x, p.y) for p in self.points)) != len(self.points):
            raise GeometryError("reference points must be pairwise distinct")
        for i, p in enumerate(self.points):
            if not contains(poly, p) or on_boundary(poly, p.x, p.y):
                raise GeometryError(f"reference point {i} ({p.x}, {p.y}) is not strictly inside")


def u_polygon(extent=DEFAULT_EXTENT, notch=DEFAULT_NOTCH) -> RoomPolygon:
    """Bounding box minus an axis-aligned notch that reaches the north wall."""
    w, h = extent
    (nx0, ny0), (nx1, _) = notch
    verts = ((0.0, 0.0), (w, 0.0), (w, h), (nx1, h), (nx1, ny0), (nx0, ny0), (nx0, h), (0.0, h))
    return RoomPolygon(verts, extent=(w, h))


def grid_layout(poly: RoomPolygon, x0: float, y0: float, dx: float, dy: float) -> ReferenceLayout:
    """Grid points strictly inside ``poly``, sorted by (x, y)."""
    xmin, ymin, xmax, ymax = poly.bbox()
    xs = np.arange(x0, xmax, dx)
    ys = np.arange(y0, ymax, dy)
    pts = [Position(float(x), float(y)) for x in xs for y in ys
           if contains(poly, (x, y)) and not on_boundary(poly, float(x), float(y))]
    pts.sort(key=lambda p: (p.x, p.y))
    layout = ReferenceLayout(tuple(pts), spacing_cm=float(min(dx, dy)))
    layout.validate(poly)
    return layout


def default_room() -> tuple[RoomPolygon, ReferenceLayout]:
    """The default U room with its 42 reference points.

    The reference-point arrangement is a reconstruction: a 100 cm x 85 cm
    grid clipped to the U interior, which happens to yield exactly 42 points.
    """
    poly = u_polygon()
    return poly, grid_layout(poly, **DEFAULT_GRID)
