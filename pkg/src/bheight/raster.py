"""Grid data model, binary raster IO, and pixel-level kernels.

Grids are row-major ``float32`` arrays anchored in planar metric
coordinates. ``origin_x``/``origin_y`` name the top-left corner of the
top-left pixel; y decreases with increasing row index. Pixels are square.
The center of pixel ``(row, col)`` is::

    x = origin_x + (col + 0.5) * pixel_size
    y = origin_y - (row + 0.5) * pixel_size

The on-disk format is little-endian: magic ``BHGR``, u16 version (1),
u32 rows, u32 cols, f64 origin_x, f64 origin_y, f64 pixel_size, f32 nodata,
followed by ``rows * cols`` f32 values row-major starting at the top row.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, GeometryError, ParameterError, ValidationError

MAGIC = b"BHGR"
VERSION = 1
DEFAULT_NODATA = -9999.0

_HEADER = struct.Struct("<4sHIIdddf")
HEADER_SIZE = _HEADER.size  # 42 bytes


def percentile(values, q):
    """Interpolated percentile shared by every rank statistic in the package.

    For sorted values ``v`` of length ``n`` and percentile ``p`` the rank is
    ``h = (n - 1) * p / 100`` and the result is
    ``v[floor(h)] + (h - floor(h)) * (v[floor(h) + 1] - v[floor(h)])``,
    i.e. numpy's ``linear`` interpolation.

    Parameters
    ----------
    values : array_like
        Non-empty collection of finite values.
    q : float or sequence of float
        Percentile(s) in [0, 100].

    Returns
    -------
    float or ndarray
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ParameterError("percentile of an empty collection is undefined")
    return np.percentile(arr, q)


@dataclass(frozen=True)
class GridGeometry:
    """Placement of a row-major grid in planar metric coordinates."""

    rows: int
    cols: int
    origin_x: float
    origin_y: float
    pixel_size: float

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ParameterError(
                f"grid must have positive dimensions, got {self.rows}x{self.cols}"
            )
        if not (self.pixel_size > 0) or not math.isfinite(self.pixel_size):
            raise ParameterError(f"pixel_size must be positive, got {self.pixel_size}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def n_pixels(self) -> int:
        return self.rows * self.cols

    def x_centers(self) -> np.ndarray:
        """Center x coordinate of every column, ascending."""
        return self.origin_x + (np.arange(self.cols) + 0.5) * self.pixel_size

    def y_centers(self) -> np.ndarray:
        """Center y coordinate of every row; descending because y is up."""
        return self.origin_y - (np.arange(self.rows) + 0.5) * self.pixel_size

    def pixel_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.origin_x + (col + 0.5) * self.pixel_size,
            self.origin_y - (row + 0.5) * self.pixel_size,
        )

    def aligned_with(self, other: "GridGeometry") -> bool:
        """True when the two grids cover the same pixels exactly."""
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and self.origin_x == other.origin_x
            and self.origin_y == other.origin_y
            and self.pixel_size == other.pixel_size
        )


def _require_aligned(a: GridGeometry, b: GridGeometry, what: str) -> None:
    if not a.aligned_with(b):
        raise GeometryError(f"{what} requires aligned grids, got {a} vs {b}")


@dataclass(frozen=True)
class RasterGrid:
    """A float32 grid plus its geometry and a nodata sentinel.

    Values are validated on construction: every cell must be finite or equal
    to ``nodata``. The backing array is locked against writes; derive new
    grids with :meth:`with_values`.
    """

    geometry: GridGeometry
    values: np.ndarray
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim == 1 and arr.size == self.geometry.n_pixels:
            arr = arr.reshape(self.geometry.shape)
        if arr.shape != self.geometry.shape:
            raise ValidationError(
                f"value array shape {arr.shape} does not match grid {self.geometry.shape}"
            )
        nodata = float(np.float32(self.nodata))
        if not math.isfinite(nodata):
            raise ValidationError("nodata sentinel must be finite")
        bad = ~(np.isfinite(arr) | (arr == np.float32(nodata)))
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValidationError(
                f"non-finite value that is not nodata at pixel ({r}, {c})"
            )
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "nodata", nodata)

    @classmethod
    def filled(
        cls, geometry: GridGeometry, value: float, nodata: float = DEFAULT_NODATA
    ) -> "RasterGrid":
        return cls(geometry, np.full(geometry.shape, value, dtype=np.float32), nodata)

    def valid_mask(self) -> np.ndarray:
        """Boolean array of cells that hold data."""
        return self.values != np.float32(self.nodata)

    def with_values(self, values: np.ndarray) -> "RasterGrid":
        """New grid sharing geometry and nodata."""
        return RasterGrid(self.geometry, values, self.nodata)


@dataclass(frozen=True)
class MaskGrid:
    """A boolean grid aligned with some raster geometry."""

    geometry: GridGeometry
    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits, dtype=bool)
        if arr.shape != self.geometry.shape:
            raise ValidationError(
                f"mask shape {arr.shape} does not match grid {self.geometry.shape}"
            )
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "bits", arr)

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def any(self) -> bool:
        return bool(self.bits.any())

    def union(self, other: "MaskGrid") -> "MaskGrid":
        _require_aligned(self.geometry, other.geometry, "mask union")
        return MaskGrid(self.geometry, self.bits | other.bits)


@dataclass
class RasterStack:
    """Aligned raster layers labelled by (band, timestamp).

    ``labels[i]`` names ``layers[i]``. Timestamps are integers and must be
    strictly increasing within each band.
    """

    labels: list[tuple[str, int]]
    layers: list[RasterGrid]
    _by_band: dict = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.labels) != len(self.layers):
            raise ValidationError("labels and layers differ in length")
        if not self.layers:
            raise ValidationError("a raster stack needs at least one layer")
        geom = self.layers[0].geometry
        for grid in self.layers[1:]:
            _require_aligned(geom, grid.geometry, "raster stack")
        by_band: dict[str, list[tuple[int, RasterGrid]]] = {}
        for (band, time), grid in zip(self.labels, self.layers):
            by_band.setdefault(band, []).append((int(time), grid))
        for band, entries in by_band.items():
            times = [t for t, _ in entries]
            if sorted(times) != times or len(set(times)) != len(times):
                raise ValidationError(
                    f"timestamps for band {band!r} must be strictly increasing"
                )
        self._by_band = by_band

    @property
    def geometry(self) -> GridGeometry:
        return self.layers[0].geometry

    def bands(self) -> list[str]:
        return list(self._by_band.keys())

    def times_for(self, band: str) -> list[int]:
        return [t for t, _ in self._by_band[band]]

    def layers_for(self, band: str) -> list[tuple[int, RasterGrid]]:
        """(timestamp, grid) pairs for one band, in time order."""
        if band not in self._by_band:
            raise ValidationError(f"band {band!r} is not present in the stack")
        return list(self._by_band[band])


# ---------------------------------------------------------------------------
# Binary IO
# ---------------------------------------------------------------------------


def write_raster(grid: RasterGrid, path) -> None:
    """Serialize ``grid`` to ``path`` in the BHGR v1 binary layout."""
    geom = grid.geometry
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        geom.rows,
        geom.cols,
        geom.origin_x,
        geom.origin_y,
        geom.pixel_size,
        np.float32(grid.nodata),
    )
    payload = np.ascontiguousarray(grid.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_raster(path) -> RasterGrid:
    """Read a BHGR v1 file; malformed payloads raise with a byte offset."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 6:
        raise FormatError("file too short for a raster header", offset=len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", offset=0)
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if len(buf) < HEADER_SIZE:
        raise FormatError("truncated header", offset=len(buf))
    _, _, rows, cols, ox, oy, px, nodata = _HEADER.unpack_from(buf, 0)
    try:
        geom = GridGeometry(rows, cols, ox, oy, px)
    except ParameterError as exc:
        raise FormatError(f"invalid grid header: {exc}", offset=6) from exc
    expected = HEADER_SIZE + rows * cols * 4
    if len(buf) != expected:
        raise FormatError(
            f"payload length {len(buf) - HEADER_SIZE} does not match "
            f"{rows}x{cols} grid",
            offset=len(buf),
        )
    values = np.frombuffer(buf, dtype="<f4", offset=HEADER_SIZE).reshape(rows, cols)
    if not math.isfinite(nodata):
        raise ValidationError("nodata sentinel in file is not finite")
    return RasterGrid(geom, values.copy(), float(nodata))


STACK_FORMAT = "bhstacks/1"


def write_stack_manifest(stack: RasterStack, directory, subdir: str = "stacks") -> str:
    """Write every layer as ``<band>_t<time>.bhgr`` plus a manifest; returns its path."""
    import json
    import os

    layer_dir = os.path.join(directory, subdir)
    os.makedirs(layer_dir, exist_ok=True)
    entries = []
    for (band, time), grid in zip(stack.labels, stack.layers):
        rel = os.path.join(subdir, f"{band}_t{time}.bhgr")
        write_raster(grid, os.path.join(directory, rel))
        entries.append({"band": band, "time": int(time), "path": rel})
    manifest_path = os.path.join(directory, "stack_manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({"format": STACK_FORMAT, "layers": entries}, fh, indent=2)
        fh.write("\n")
    return manifest_path


def read_stack_manifest(path) -> RasterStack:
    """Load the stack a manifest describes; layer paths resolve relative to it."""
    import json
    import os

    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != STACK_FORMAT:
        raise FormatError(
            f"unsupported stack manifest format {manifest.get('format')!r}"
        )
    base = os.path.dirname(os.path.abspath(path))
    labels = []
    layers = []
    for entry in manifest.get("layers", []):
        try:
            band, time, rel = entry["band"], int(entry["time"]), entry["path"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed stack manifest entry {entry!r}: {exc}") from None
        labels.append((band, time))
        layers.append(read_raster(os.path.join(base, rel)))
    if not labels:
        raise ValidationError("stack manifest lists no layers")
    return RasterStack(labels, layers)


def raster_to_csv(grid: RasterGrid, path) -> None:
    """Dump a grid as ``row,col,x,y,value`` CSV for external plotting."""
    geom = grid.geometry
    xs = geom.x_centers()
    ys = geom.y_centers()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("row,col,x,y,value\n")
        for r in range(geom.rows):
            row_vals = grid.values[r]
            for c in range(geom.cols):
                fh.write(
                    f"{r},{c},{float(xs[c])!r},{float(ys[r])!r},{float(row_vals[c])!r}\n"
                )


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def rasterize(polygon, geometry: GridGeometry) -> MaskGrid:
    """Pixels whose centers fall inside a polygon.

    Containment uses the even-odd rule with a half-open convention: centers
    exactly on a top or left edge are inside, centers on a bottom or right
    edge are outside. A horizontal edge never counts as a crossing; an edge
    crosses the scan level ``py`` when ``min(y1, y2) < py <= max(y1, y2)``
    and its x intersection lies strictly right of the pixel center.

    Parameters
    ----------
    polygon : Polygon
        Planar polygon with an ``exterior`` ring and optional ``holes``.
    geometry : GridGeometry
        Target grid; a polygon entirely outside yields an all-false mask.
    """
    rings = [np.asarray(polygon.exterior, dtype=np.float64)]
    rings.extend(np.asarray(h, dtype=np.float64) for h in polygon.holes)
    x1s, y1s, x2s, y2s = [], [], [], []
    for ring in rings:
        nxt = np.roll(ring, -1, axis=0)
        keep = ring[:, 1] != nxt[:, 1]
        x1s.append(ring[keep, 0])
        y1s.append(ring[keep, 1])
        x2s.append(nxt[keep, 0])
        y2s.append(nxt[keep, 1])
    x1 = np.concatenate(x1s)
    y1 = np.concatenate(y1s)
    x2 = np.concatenate(x2s)
    y2 = np.concatenate(y2s)
    bits = np.zeros(geometry.shape, dtype=bool)
    if x1.size == 0:
        return MaskGrid(geometry, bits)
    ymin = np.minimum(y1, y2)
    ymax = np.maximum(y1, y2)
    ycent = geometry.y_centers()
    xcent = geometry.x_centers()
    rows = np.flatnonzero((ycent > ymin.min()) & (ycent <= ymax.max()))
    for r in rows:
        py = ycent[r]
        sel = (ymin < py) & (py <= ymax)
        if not sel.any():
            continue
        t = (py - y1[sel]) / (y2[sel] - y1[sel])
        xi = x1[sel] + t * (x2[sel] - x1[sel])
        xi.sort()
        # Crossings right of a center outside [xi[0], xi[-1]) are all or
        # none of an even total, so only that span can be interior.
        c0 = int(np.searchsorted(xcent, xi[0], side="left"))
        c1 = int(np.searchsorted(xcent, xi[-1], side="left"))
        if c1 <= c0:
            continue
        greater = xi.size - np.searchsorted(xi, xcent[c0:c1], side="right")
        bits[r, c0:c1] = (greater % 2) == 1
    return MaskGrid(geometry, bits)


def window_median(grid: RasterGrid, window_m: float) -> RasterGrid:
    """Median filter over a square window of physical side ``window_m``.

    The pixel radius is ``floor((window_m / pixel_size) / 2)``, so 50 m on a
    10 m grid uses a 5x5 window. Windows shrink at grid edges. Nodata cells
    are excluded from each window; a window with no valid cell yields nodata.
    """
    px = grid.geometry.pixel_size
    if window_m < px:
        raise ParameterError(
            f"window of {window_m} m is narrower than one {px} m pixel"
        )
    radius = int(math.floor((window_m / px) / 2.0))
    if radius == 0:
        return grid
    rows, cols = grid.geometry.shape
    side = 2 * radius + 1
    padded = np.full((rows + 2 * radius, cols + 2 * radius), np.nan, dtype=np.float32)
    padded[radius : radius + rows, radius : radius + cols] = np.where(
        grid.valid_mask(), grid.values, np.nan
    )
    windows = np.lib.stride_tricks.sliding_window_view(padded, (side, side))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        med = np.nanmedian(windows, axis=(-2, -1))
    out = np.where(np.isnan(med), np.float32(grid.nodata), med.astype(np.float32))
    return grid.with_values(out)


def buffer_mask(mask: MaskGrid, distance_m: float) -> MaskGrid:
    """Dilate a mask to every pixel within ``distance_m`` of a set pixel.

    Distance is Euclidean between pixel centers, so ``distance_m = 0`` is the
    identity. The result always contains the input.
    """
    if distance_m < 0:
        raise ParameterError(f"buffer distance must be >= 0, got {distance_m}")
    px = mask.geometry.pixel_size
    reach = int(math.ceil(distance_m / px)) + 1
    offsets = [
        (dr, dc)
        for dr in range(-reach, reach + 1)
        for dc in range(-reach, reach + 1)
        if math.hypot(dr * px, dc * px) <= distance_m
    ]
    rows, cols = mask.geometry.shape
    src = mask.bits
    out = np.zeros_like(src)
    for dr, dc in offsets:
        r0, r1 = max(0, dr), rows + min(0, dr)
        c0, c1 = max(0, dc), cols + min(0, dc)
        if r0 >= r1 or c0 >= c1:
            continue
        out[r0:r1, c0:c1] |= src[r0 - dr : r1 - dr, c0 - dc : c1 - dc]
    return MaskGrid(mask.geometry, out)


def percentile_clip_mask(grid: RasterGrid, lo_pct: float, hi_pct: float) -> MaskGrid:
    """Mask of valid pixels whose value lies inside the percentile band.

    Band edges are computed with the package percentile rule over valid
    pixels and membership is inclusive on both sides. A grid with no valid
    pixels yields an empty mask.
    """
    if not (0.0 <= lo_pct < hi_pct <= 100.0):
        raise ParameterError(
            f"percentile band must satisfy 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})"
        )
    valid = grid.valid_mask()
    vals = grid.values[valid]
    if vals.size == 0:
        return MaskGrid(grid.geometry, np.zeros(grid.geometry.shape, dtype=bool))
    lo, hi = percentile(vals, [lo_pct, hi_pct])
    bits = valid & (grid.values >= lo) & (grid.values <= hi)
    return MaskGrid(grid.geometry, bits)
