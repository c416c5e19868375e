"""Footprint polygons: hulls, minimum bounding rectangles, boundary distances.

Coordinates are planar meters. Rings are stored open (first vertex not
repeated); exteriors may carry holes. Polygons are assumed simple; only ring
closure, vertex count, and area are validated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegeneracyError,
    GeometryError,
    ParameterError,
    ValidationError,
)


def _ring_array(ring) -> np.ndarray:
    arr = np.asarray(ring, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError(f"a ring must be an (n, 2) array, got shape {arr.shape}")
    if arr.shape[0] >= 2 and np.array_equal(arr[0], arr[-1]):
        arr = arr[:-1]
    if not np.isfinite(arr).all():
        raise ValidationError("ring coordinates must be finite")
    return arr


def _shoelace(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


@dataclass(frozen=True)
class Polygon:
    """A simple polygon with an exterior ring and optional holes."""

    exterior: np.ndarray
    holes: tuple = ()

    def __post_init__(self):
        ext = _ring_array(self.exterior)
        if len({(float(x), float(y)) for x, y in ext}) < 3:
            raise ValidationError("exterior ring needs at least 3 distinct vertices")
        if _shoelace(ext) == 0.0:
            raise DegeneracyError("exterior ring has zero signed area")
        holes = tuple(_ring_array(h) for h in self.holes)
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "holes", holes)

    def bounds(self) -> tuple[float, float, float, float]:
        """(min_x, min_y, max_x, max_y) of the exterior ring."""
        xs, ys = self.exterior[:, 0], self.exterior[:, 1]
        return float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())


@dataclass(frozen=True)
class Footprint:
    """A building outline with an identifier and optional reference height."""

    id: str
    polygon: Polygon
    ref_height_m: float | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("footprint id must be a non-empty string")
        if self.ref_height_m is not None and not (self.ref_height_m > 0):
            raise ValidationError(
                f"footprint {self.id!r}: reference height must be > 0"
            )


class FootprintSet:
    """An ordered collection of footprints with unique ids."""

    def __init__(self, footprints):
        self.footprints = list(footprints)
        seen = set()
        for fp in self.footprints:
            if fp.id in seen:
                raise ValidationError(f"duplicate footprint id {fp.id!r}")
            seen.add(fp.id)

    def __len__(self):
        return len(self.footprints)

    def __iter__(self):
        return iter(self.footprints)

    def __getitem__(self, i):
        return self.footprints[i]

    def ids(self) -> list[str]:
        return [fp.id for fp in self.footprints]


# ---------------------------------------------------------------------------
# GeoJSON interchange
# ---------------------------------------------------------------------------


def footprints_from_geojson(obj) -> FootprintSet:
    """Load footprints from a GeoJSON FeatureCollection (dict or path).

    Geometries must be single Polygons in planar meter coordinates; a
    MultiPolygon raises with a pointer at the offending feature. The closing
    vertex GeoJSON repeats is dropped on load. Properties: ``id`` (required,
    string) and ``ref_height_m`` (optional, positive).
    """
    if not isinstance(obj, dict):
        with open(obj, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    if obj.get("type") != "FeatureCollection":
        raise ValidationError("expected a GeoJSON FeatureCollection")
    fps = []
    for i, feature in enumerate(obj.get("features", [])):
        geom = feature.get("geometry") or {}
        gtype = geom.get("type")
        props = feature.get("properties") or {}
        label = props.get("id", f"feature {i}")
        if gtype == "MultiPolygon":
            raise GeometryError(
                f"{label}: MultiPolygon geometries are not supported; "
                "split the feature into one Polygon per part"
            )
        if gtype != "Polygon":
            raise GeometryError(f"{label}: unsupported geometry type {gtype!r}")
        rings = geom.get("coordinates") or []
        if not rings:
            raise ValidationError(f"{label}: polygon has no rings")
        poly = Polygon(rings[0], tuple(rings[1:]))
        fid = props.get("id")
        if not isinstance(fid, str) or not fid:
            raise ValidationError(f"feature {i}: missing required string property 'id'")
        ref = props.get("ref_height_m")
        fps.append(Footprint(fid, poly, None if ref is None else float(ref)))
    return FootprintSet(fps)


def footprints_to_geojson(footprints: FootprintSet) -> dict:
    """Serialize footprints back to a FeatureCollection with closed rings."""

    def close(ring: np.ndarray):
        pts = ring.tolist()
        pts.append(pts[0])
        return pts

    features = []
    for fp in footprints:
        props = {"id": fp.id}
        if fp.ref_height_m is not None:
            props["ref_height_m"] = fp.ref_height_m
        coords = [close(fp.polygon.exterior)]
        coords.extend(close(h) for h in fp.polygon.holes)
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": coords},
                "properties": props,
            }
        )
    return {"type": "FeatureCollection", "features": features}


# ---------------------------------------------------------------------------
# Area, centroid, convex hull
# ---------------------------------------------------------------------------


def polygon_area(polygon: Polygon) -> float:
    """Unsigned shoelace area of the exterior minus the holes."""
    area = abs(_shoelace(polygon.exterior))
    for hole in polygon.holes:
        area -= abs(_shoelace(hole))
    return area


def polygon_centroid(polygon: Polygon) -> tuple[float, float]:
    """Area-weighted centroid; holes subtract their contribution."""

    def ring_terms(ring):
        x, y = ring[:, 0], ring[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        a = 0.5 * float(np.sum(cross))
        cx = float(np.sum((x + xn) * cross)) / 6.0
        cy = float(np.sum((y + yn) * cross)) / 6.0
        sign = 1.0 if a >= 0 else -1.0
        return abs(a), sign * cx, sign * cy

    area, sx, sy = ring_terms(polygon.exterior)
    for hole in polygon.holes:
        ha, hx, hy = ring_terms(hole)
        area -= ha
        sx -= hx
        sy -= hy
    if area <= 0:
        raise DegeneracyError("polygon area vanished while computing centroid")
    return sx / area, sy / area


def point_in_polygon(point, polygon: Polygon) -> bool:
    """Even-odd containment with the same edge rule pixel rasterization uses.

    An edge crosses the horizontal through the point when
    ``min(y1, y2) < py <= max(y1, y2)`` and its intersection lies strictly
    right of ``px``. Holes flip parity, so points inside a hole are outside.
    """
    px, py = float(point[0]), float(point[1])
    crossings = 0
    rings = [polygon.exterior] + list(polygon.holes)
    for ring in rings:
        nxt = np.roll(ring, -1, axis=0)
        x1, y1 = ring[:, 0], ring[:, 1]
        x2, y2 = nxt[:, 0], nxt[:, 1]
        sel = (np.minimum(y1, y2) < py) & (py <= np.maximum(y1, y2))
        if not sel.any():
            continue
        t = (py - y1[sel]) / (y2[sel] - y1[sel])
        xi = x1[sel] + t * (x2[sel] - x1[sel])
        crossings += int(np.count_nonzero(xi > px))
    return crossings % 2 == 1


def convex_hull(points) -> np.ndarray:
    """Counterclockwise convex hull by monotone chain, collinear points dropped."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError(f"points must be (n, 2), got shape {pts.shape}")
    uniq = sorted({(float(x), float(y)) for x, y in pts})
    if len(uniq) < 3:
        raise DegeneracyError("convex hull needs at least 3 distinct points")

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(seq):
        chain = []
        for p in seq:
            while len(chain) >= 2 and cross(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(uniq)
    upper = half(reversed(uniq))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegeneracyError("points are collinear; hull is degenerate")
    return np.asarray(hull, dtype=np.float64)


# ---------------------------------------------------------------------------
# Minimum-area bounding rectangle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MinBoundingGeometry:
    """Minimum-area enclosing rectangle of a footprint.

    ``orientation_deg`` is measured counterclockwise from the +x axis to the
    long side and lies in [0, 180). ``width_m <= length_m``.
    """

    width_m: float
    length_m: float
    orientation_deg: float


def min_bounding_rect(polygon: Polygon) -> MinBoundingGeometry:
    """Rotating-calipers minimum-area rectangle over the convex hull.

    One side of the optimum is collinear with a hull edge, so scanning hull
    edges is exact. Near-ties in area (relative 1e-9) resolve to the narrower
    rectangle, then to the smaller orientation angle. Width is frame
    independent, so the narrow-first rule keeps the reported rectangle stable
    under rotation of the input; exact ties between incongruent rectangles do
    occur (two adjacent quadrilateral edges can both bound area twice that of
    the triangle they span).
    """
    hull = convex_hull(polygon.exterior)
    edges = np.roll(hull, -1, axis=0) - hull
    best = None
    for ex, ey in edges:
        norm = math.hypot(ex, ey)
        ux, uy = ex / norm, ey / norm
        pu = hull[:, 0] * ux + hull[:, 1] * uy
        pv = -hull[:, 0] * uy + hull[:, 1] * ux
        du = float(pu.max() - pu.min())
        dv = float(pv.max() - pv.min())
        area = du * dv
        ang_u = math.degrees(math.atan2(uy, ux)) % 180.0
        ang_v = math.degrees(math.atan2(ux, -uy)) % 180.0
        if du > dv:
            width, length, ang = dv, du, ang_u
        elif dv > du:
            width, length, ang = du, dv, ang_v
        else:
            width, length, ang = du, dv, min(ang_u, ang_v)
        if best is None:
            best = (area, ang, width, length)
            continue
        tol = 1e-9 * max(best[0], area)
        if area < best[0] - tol:
            best = (area, ang, width, length)
        elif abs(area - best[0]) <= tol and (width, ang) < (best[2], best[1]):
            best = (min(best[0], area), ang, width, length)
    return MinBoundingGeometry(width_m=best[2], length_m=best[3], orientation_deg=best[1])


# ---------------------------------------------------------------------------
# Boundary distance
# ---------------------------------------------------------------------------


def _segments(ring: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return ring, np.roll(ring, -1, axis=0)


def _point_segment_dist(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from points ``p`` (n, 2) to segments ``a``->``b`` (m, 2).

    Component arithmetic is kept explicit (ap - t*d, two-term square sums) so
    a scalar re-implementation of the same formula reproduces every bit.
    """
    dx = b[:, 0] - a[:, 0]
    dy = b[:, 1] - a[:, 1]
    len2 = dx * dx + dy * dy
    len2 = np.where(len2 == 0.0, 1.0, len2)
    apx = p[:, None, 0] - a[None, :, 0]
    apy = p[:, None, 1] - a[None, :, 1]
    t = (apx * dx[None, :] + apy * dy[None, :]) / len2[None, :]
    t = np.clip(t, 0.0, 1.0)
    ex = apx - t * dx[None, :]
    ey = apy - t * dy[None, :]
    return np.sqrt(ex * ex + ey * ey)


def polygon_boundary_distance(a: Polygon, b: Polygon) -> float:
    """Minimum distance between exterior boundaries; crossing boundaries give 0."""
    a0, a1 = _segments(a.exterior)
    b0, b1 = _segments(b.exterior)

    def cross(v, w):
        return v[..., 0] * w[..., 1] - v[..., 1] * w[..., 0]

    db = (b1 - b0)[None, :, :]
    da = (a1 - a0)[:, None, :]
    d1 = cross(db, a0[:, None, :] - b0[None, :, :])
    d2 = cross(db, a1[:, None, :] - b0[None, :, :])
    d3 = cross(da, b0[None, :, :] - a0[:, None, :])
    d4 = cross(da, b1[None, :, :] - a0[:, None, :])
    if bool(np.any((d1 * d2 < 0) & (d3 * d4 < 0))):
        return 0.0
    dists = [
        _point_segment_dist(a0, b0, b1).min(),
        _point_segment_dist(a1, b0, b1).min(),
        _point_segment_dist(b0, a0, a1).min(),
        _point_segment_dist(b1, a0, a1).min(),
    ]
    return float(min(dists))


class _SpatialIndex:
    """Uniform-cell index over footprint bounding boxes.

    Cell side defaults to twice the median footprint diameter. Queries expand
    outward ring by ring; a candidate first seen in ring ``k`` can be no
    closer than ``(k - 1) * cell``, which makes pruning exact.
    """

    def __init__(self, footprints):
        self.fps = list(footprints)
        boxes = np.array([fp.polygon.bounds() for fp in self.fps], dtype=np.float64)
        self.boxes = boxes
        diameters = np.hypot(boxes[:, 2] - boxes[:, 0], boxes[:, 3] - boxes[:, 1])
        cell = 2.0 * float(np.median(diameters))
        span = max(
            float(boxes[:, 2].max() - boxes[:, 0].min()),
            float(boxes[:, 3].max() - boxes[:, 1].min()),
            1.0,
        )
        # Keep the cell grid from exploding for sparse, spread-out data.
        self.cell = max(cell, span / 512.0, 1e-9)
        self.ox = float(boxes[:, 0].min())
        self.oy = float(boxes[:, 1].min())
        self.cells: dict[tuple[int, int], list[int]] = {}
        self.ranges = []
        for i, (x0, y0, x1, y1) in enumerate(boxes):
            c0, r0 = self._cell_of(x0, y0)
            c1, r1 = self._cell_of(x1, y1)
            self.ranges.append((c0, r0, c1, r1))
            for cc in range(c0, c1 + 1):
                for rr in range(r0, r1 + 1):
                    self.cells.setdefault((cc, rr), []).append(i)
        self.max_extent = max(
            int(math.ceil(span / self.cell)) + 2, 2
        )

    def _cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int((x - self.ox) // self.cell), int((y - self.oy) // self.cell)

    def _ring_cells(self, rng: tuple[int, int, int, int], k: int):
        c0, r0, c1, r1 = rng
        if k == 0:
            for cc in range(c0, c1 + 1):
                for rr in range(r0, r1 + 1):
                    yield (cc, rr)
            return
        lo_c, hi_c = c0 - k, c1 + k
        lo_r, hi_r = r0 - k, r1 + k
        for cc in range(lo_c, hi_c + 1):
            yield (cc, lo_r)
            yield (cc, hi_r)
        for rr in range(lo_r + 1, hi_r):
            yield (lo_c, rr)
            yield (hi_c, rr)

    def nearest_distance(self, index: int) -> float | None:
        target = self.fps[index]
        rng = self.ranges[index]
        seen = {index}
        best = math.inf
        k = 0
        while k <= self.max_extent:
            if best < math.inf and (k - 1) * self.cell > best:
                break
            for cell in self._ring_cells(rng, k):
                for j in self.cells.get(cell, ()):
                    if j in seen:
                        continue
                    seen.add(j)
                    d = polygon_boundary_distance(target.polygon, self.fps[j].polygon)
                    if d < best:
                        best = d
            k += 1
        return None if best == math.inf else best


def near_distance(target: Footprint, others) -> float | None:
    """Nearest boundary-to-boundary distance from ``target`` to any other footprint.

    ``others`` may include the target itself (matched by id, skipped). With no
    other footprint available the result is ``None``, a sentinel distinct from
    a true distance of 0 between touching boundaries.
    """
    pool = [fp for fp in others if fp.id != target.id]
    if not pool:
        return None
    idx = _SpatialIndex([target] + pool)
    return idx.nearest_distance(0)


def near_distance_table(footprints) -> dict[str, float | None]:
    """Nearest-neighbor boundary distance for every footprint, id-keyed."""
    fps = list(footprints)
    if not fps:
        return {}
    if len(fps) == 1:
        return {fps[0].id: None}
    idx = _SpatialIndex(fps)
    return {fp.id: idx.nearest_distance(i) for i, fp in enumerate(fps)}
