"""Spectral/SAR indices and per-pixel temporal statistics.

A *signal* is either a raw band held in a raster stack (``B3``, ``VV``, ...)
or an index derived per acquisition date from two bands. Each feature raster
reduces one signal's time series with one statistic; feature names follow
``<signal>_<stat>`` (``LSWI_skew``, ``B3_p10``, ``VVH_stdDev``).
"""

from __future__ import annotations

import enum
import itertools
import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, ParameterError, RecipeError, ValidationError
from .raster import RasterGrid, RasterStack, read_raster, write_raster

EPS_DIV = 1e-12
EPS_VAR = 1e-12
DEFAULT_GAMMA = 10.0

# Role names used by index definitions, mapped to default band labels.
DEFAULT_BAND_MAP = {
    "Green": "B3",
    "Red": "B4",
    "RedEdge1": "B5",
    "RedEdge2": "B6",
    "NIR": "B8",
    "SWIR": "B11",
    "VV": "VV",
    "VH": "VH",
}

DEFAULT_SIGNALS = (
    "B3",
    "B4",
    "B5",
    "B6",
    "B8",
    "NDVI",
    "NDWI",
    "MNDWI",
    "LSWI",
    "NDBI",
    "VV",
    "VH",
    "VVH",
)

GEOMETRY_FEATURES = ("MBG_Width", "MBG_Length", "MBG_Orientation", "Near_Distance")


class IndexKind(enum.Enum):
    """Two-band indices computed per acquisition date.

    The first four are normalized differences ``(a - b) / (a + b)`` of the
    named roles; NDBI is the sign flip of LSWI's band order; VVH couples the
    SAR polarizations multiplicatively.
    """

    MNDWI = ("Green", "SWIR")
    NDVI = ("NIR", "Red")
    NDWI = ("Green", "NIR")
    LSWI = ("NIR", "SWIR")
    NDBI = ("SWIR", "NIR")
    VVH = ("VV", "VH")

    @property
    def roles(self) -> tuple[str, str]:
        return self.value


class StatKind(enum.Enum):
    """Per-pixel reductions over a signal's time series."""

    P0 = "p0"
    P10 = "p10"
    P25 = "p25"
    MEDIAN = "median"
    P75 = "p75"
    P90 = "p90"
    P100 = "p100"
    MEAN = "mean"
    STDDEV = "stdDev"
    SKEW = "skew"
    KURTOSIS = "kurtosis"
    IQR = "interquartile_range"

    @classmethod
    def parse(cls, text: str) -> "StatKind":
        aliases = {
            "min": cls.P0,
            "max": cls.P100,
            "p50": cls.MEDIAN,
            "stddev": cls.STDDEV,
            "skewness": cls.SKEW,
            "iqr": cls.IQR,
        }
        low = text.strip()
        for kind in cls:
            if kind.value.lower() == low.lower():
                return kind
        if low.lower() in aliases:
            return aliases[low.lower()]
        raise RecipeError(f"unknown statistic {text!r}")


ALL_STATS = tuple(StatKind)


@dataclass(frozen=True)
class FeatureRecipe:
    """Which feature rasters to compute.

    ``entries`` pairs a signal name with a statistic; ``geometry`` lists
    footprint-attribute features appended after the raster features. ``gamma``
    is the VVH base; ``band_map`` resolves index roles to band labels so
    other sensors need no code change.
    """

    entries: tuple = ()
    geometry: tuple = GEOMETRY_FEATURES
    gamma: float = DEFAULT_GAMMA
    band_map: tuple = tuple(sorted(DEFAULT_BAND_MAP.items()))

    def __post_init__(self):
        if not (self.gamma > 0):
            raise ParameterError(f"gamma must be > 0, got {self.gamma}")
        names = self.names()
        if len(names) != len(set(names)):
            raise RecipeError("recipe produces duplicate feature names")

    def band_lookup(self) -> dict[str, str]:
        return dict(self.band_map)

    def entry_names(self) -> list[str]:
        return [f"{signal}_{stat.value}" for signal, stat in self.entries]

    def names(self) -> list[str]:
        return self.entry_names() + list(self.geometry)


def default_recipe() -> FeatureRecipe:
    """Every default signal crossed with every statistic, plus footprint geometry."""
    entries = tuple(itertools.product(DEFAULT_SIGNALS, ALL_STATS))
    return FeatureRecipe(entries=entries)


# ---------------------------------------------------------------------------
# Index arithmetic
# ---------------------------------------------------------------------------


def normalized_difference(a: RasterGrid, b: RasterGrid) -> RasterGrid:
    """``(a - b) / (a + b)`` per pixel; |a + b| below 1e-12 yields nodata.

    For non-negative inputs the result lies in [-1, 1] wherever defined, and
    swapping the operands flips its sign.
    """
    if not a.geometry.aligned_with(b.geometry):
        raise GeometryError("normalized difference requires aligned grids")
    valid = a.valid_mask() & b.valid_mask()
    total = a.values + b.values
    ok = valid & (np.abs(total) >= EPS_DIV)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (a.values - b.values) / total
    out = np.where(ok, ratio, np.float32(a.nodata)).astype(np.float32)
    return RasterGrid(a.geometry, out, a.nodata)


def vvh_index(vv: RasterGrid, vh: RasterGrid, gamma: float = DEFAULT_GAMMA) -> RasterGrid:
    """Multiplicative SAR coupling ``VV * gamma ** VH``; monotone in VV."""
    if not (gamma > 0):
        raise ParameterError(f"gamma must be > 0, got {gamma}")
    if not vv.geometry.aligned_with(vh.geometry):
        raise GeometryError("VVH requires aligned grids")
    valid = vv.valid_mask() & vh.valid_mask()
    with np.errstate(over="ignore", invalid="ignore"):
        combined = vv.values * np.power(np.float32(gamma), vh.values)
    out = np.where(valid, combined, np.float32(vv.nodata)).astype(np.float32)
    return RasterGrid(vv.geometry, out, vv.nodata)


def _merge_stacks(stacks) -> RasterStack:
    if isinstance(stacks, RasterStack):
        return stacks
    stacks = list(stacks)
    if not stacks:
        raise ValidationError("at least one raster stack is required")
    labels = []
    layers = []
    for stack in stacks:
        labels.extend(stack.labels)
        layers.extend(stack.layers)
    return RasterStack(labels, layers)


def signal_series(
    stack: RasterStack,
    signal: str,
    gamma: float = DEFAULT_GAMMA,
    band_map: dict | None = None,
) -> list[tuple[int, RasterGrid]]:
    """Time series of a signal: raw band layers, or an index per common date."""
    band_map = dict(DEFAULT_BAND_MAP if band_map is None else band_map)
    if signal in stack.bands():
        return stack.layers_for(signal)
    try:
        kind = IndexKind[signal]
    except KeyError:
        raise RecipeError(f"unknown signal {signal!r}") from None
    role_a, role_b = kind.roles
    label_a = band_map.get(role_a, role_a)
    label_b = band_map.get(role_b, role_b)
    missing = [lbl for lbl in (label_a, label_b) if lbl not in stack.bands()]
    if missing:
        raise RecipeError(
            f"signal {signal!r} needs band(s) {missing} not present in the stack"
        )
    series_a = dict(stack.layers_for(label_a))
    series_b = dict(stack.layers_for(label_b))
    common = sorted(set(series_a) & set(series_b))
    if not common:
        raise RecipeError(
            f"signal {signal!r}: bands {label_a!r} and {label_b!r} share no dates"
        )
    out = []
    for t in common:
        if kind is IndexKind.VVH:
            out.append((t, vvh_index(series_a[t], series_b[t], gamma)))
        else:
            out.append((t, normalized_difference(series_a[t], series_b[t])))
    return out


# ---------------------------------------------------------------------------
# Temporal statistics
# ---------------------------------------------------------------------------


def _series_cube(series) -> tuple[np.ndarray, RasterGrid]:
    grids = [grid for _, grid in series]
    first = grids[0]
    cube = np.empty((len(grids),) + first.geometry.shape, dtype=np.float64)
    for i, grid in enumerate(grids):
        cube[i] = np.where(grid.valid_mask(), grid.values.astype(np.float64), np.nan)
    return cube, first


def _nan_percentile_planes(cube: np.ndarray, qs) -> list[np.ndarray]:
    """Per-pixel percentiles over axis 0, skipping NaNs.

    Equivalent to ``np.percentile(valid_values, q)`` per pixel (linear
    interpolation, including numpy's two-sided lerp), but vectorized; the
    pointwise nanpercentile fallback is far too slow for full rasters.
    """
    ordered = np.sort(cube, axis=0)  # NaNs sort to the end
    count = np.sum(~np.isnan(cube), axis=0)
    top = np.maximum(count - 1, 0)
    planes = []
    for q in qs:
        h = top * (q / 100.0)
        lo = np.floor(h).astype(np.intp)
        hi = np.minimum(lo + 1, top)
        a = np.take_along_axis(ordered, lo[None], axis=0)[0]
        b = np.take_along_axis(ordered, hi[None], axis=0)[0]
        t = h - lo
        diff = b - a
        plane = np.where(t >= 0.5, b - diff * (1.0 - t), a + diff * t)
        planes.append(np.where(count == 0, np.nan, plane))
    return planes


def _reduce_cube(cube: np.ndarray, stats) -> dict[StatKind, np.ndarray]:
    """Reduce a (time, rows, cols) NaN-masked cube for each requested statistic."""
    wanted = set(stats)
    out: dict[StatKind, np.ndarray] = {}
    n = np.sum(~np.isnan(cube), axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        pct_kinds = {
            StatKind.P0: 0.0,
            StatKind.P10: 10.0,
            StatKind.P25: 25.0,
            StatKind.MEDIAN: 50.0,
            StatKind.P75: 75.0,
            StatKind.P90: 90.0,
            StatKind.P100: 100.0,
        }
        need_pct = [k for k in pct_kinds if k in wanted]
        if StatKind.IQR in wanted:
            for k in (StatKind.P25, StatKind.P75):
                if k not in need_pct:
                    need_pct.append(k)
        pct_vals = {}
        if need_pct:
            qs = [pct_kinds[k] for k in need_pct]
            for k, plane in zip(need_pct, _nan_percentile_planes(cube, qs)):
                pct_vals[k] = plane
        for k in pct_kinds:
            if k in wanted:
                out[k] = pct_vals[k]
        if StatKind.IQR in wanted:
            out[StatKind.IQR] = pct_vals[StatKind.P75] - pct_vals[StatKind.P25]
        moment_kinds = {StatKind.MEAN, StatKind.STDDEV, StatKind.SKEW, StatKind.KURTOSIS}
        if wanted & moment_kinds:
            mean = np.nanmean(cube, axis=0)
            if StatKind.MEAN in wanted:
                out[StatKind.MEAN] = mean
            if wanted & {StatKind.STDDEV, StatKind.SKEW, StatKind.KURTOSIS}:
                delta = cube - mean[None]
                m2 = np.nanmean(delta**2, axis=0)
                if StatKind.STDDEV in wanted:
                    out[StatKind.STDDEV] = np.sqrt(m2)
                shaped = (n >= 3) & (m2 >= EPS_VAR)
                if StatKind.SKEW in wanted:
                    m3 = np.nanmean(delta**3, axis=0)
                    with np.errstate(divide="ignore", invalid="ignore"):
                        skew = m3 / np.power(m2, 1.5)
                    out[StatKind.SKEW] = np.where(shaped, skew, np.nan)
                if StatKind.KURTOSIS in wanted:
                    m4 = np.nanmean(delta**4, axis=0)
                    with np.errstate(divide="ignore", invalid="ignore"):
                        kurt = m4 / (m2 * m2) - 3.0
                    out[StatKind.KURTOSIS] = np.where(shaped, kurt, np.nan)
    empty = n == 0
    for k, plane in out.items():
        out[k] = np.where(empty, np.nan, plane)
    return out


def temporal_stat(
    stack,
    signal: str,
    stat: StatKind,
    gamma: float = DEFAULT_GAMMA,
    band_map: dict | None = None,
) -> RasterGrid:
    """Reduce one signal's time series to a single grid with one statistic.

    Skewness and excess kurtosis become nodata where fewer than 3 valid
    observations exist or the second moment falls below 1e-12; every
    statistic is nodata where no valid observation exists at all.
    """
    merged = _merge_stacks(stack)
    series = signal_series(merged, signal, gamma=gamma, band_map=band_map)
    cube, first = _series_cube(series)
    plane = _reduce_cube(cube, [stat])[stat]
    out = np.where(np.isnan(plane), first.nodata, plane).astype(np.float32)
    return RasterGrid(first.geometry, out, first.nodata)


def build_feature_rasters(
    stacks,
    recipe: FeatureRecipe,
    footprints=None,
) -> dict[str, RasterGrid]:
    """One named grid per recipe entry, in recipe order.

    Index signals are computed per date, then reduced over time. When
    ``footprints`` is given, the recipe's geometry features are burned into
    additional grids: each footprint's pixels carry that footprint's
    attribute, everything else is nodata. Unresolvable entries are collected
    and reported together.
    """
    merged = _merge_stacks(stacks)
    band_map = recipe.band_lookup()
    out: dict[str, RasterGrid] = {}
    failures = []
    by_signal: dict[str, list[StatKind]] = {}
    for signal, stat in recipe.entries:
        by_signal.setdefault(signal, []).append(stat)
    planes: dict[str, dict[StatKind, np.ndarray]] = {}
    base = merged.layers[0]
    for signal, stats in by_signal.items():
        try:
            series = signal_series(merged, signal, gamma=recipe.gamma, band_map=band_map)
        except RecipeError as exc:
            failures.append(str(exc))
            continue
        cube, _ = _series_cube(series)
        planes[signal] = _reduce_cube(cube, stats)
    if failures:
        raise RecipeError("unresolvable recipe entries: " + "; ".join(failures))
    for signal, stat in recipe.entries:
        plane = planes[signal][stat]
        vals = np.where(np.isnan(plane), base.nodata, plane).astype(np.float32)
        out[f"{signal}_{stat.value}"] = RasterGrid(base.geometry, vals, base.nodata)
    if footprints is not None and recipe.geometry:
        for name, grid in burn_geometry_rasters(
            footprints, base.geometry, recipe.geometry, base.nodata
        ).items():
            out[name] = grid
    return out


def burn_geometry_rasters(
    footprints, geometry, names=GEOMETRY_FEATURES, nodata: float = -9999.0
) -> dict[str, RasterGrid]:
    """Rasterize footprint attributes: each footprint's pixels get its value."""
    from .geometry import min_bounding_rect, near_distance_table
    from .raster import rasterize

    names = list(names)
    unknown = [n for n in names if n not in GEOMETRY_FEATURES]
    if unknown:
        raise RecipeError(f"unknown geometry features: {unknown}")
    planes = {n: np.full(geometry.shape, nodata, dtype=np.float32) for n in names}
    near = near_distance_table(footprints) if "Near_Distance" in names else {}
    for fp in footprints:
        bits = rasterize(fp.polygon, geometry).bits
        if not bits.any():
            continue
        values = {}
        if {"MBG_Width", "MBG_Length", "MBG_Orientation"} & set(names):
            mbg = min_bounding_rect(fp.polygon)
            values["MBG_Width"] = mbg.width_m
            values["MBG_Length"] = mbg.length_m
            values["MBG_Orientation"] = mbg.orientation_deg
        if "Near_Distance" in names:
            values["Near_Distance"] = near.get(fp.id)
        for name in names:
            val = values.get(name)
            if val is None:
                continue
            planes[name][bits] = np.float32(val)
    return {n: RasterGrid(geometry, planes[n], nodata) for n in names}


# ---------------------------------------------------------------------------
# Feature directory IO
# ---------------------------------------------------------------------------

FEATURE_MANIFEST = "manifest.json"
FEATURE_FORMAT = "bhfeatures/1"


def write_feature_dir(features: dict[str, RasterGrid], directory) -> None:
    """Write one ``<name>.bhgr`` per feature plus a manifest listing the order."""
    os.makedirs(directory, exist_ok=True)
    for name, grid in features.items():
        write_raster(grid, os.path.join(directory, f"{name}.bhgr"))
    manifest = {"format": FEATURE_FORMAT, "features": list(features.keys())}
    with open(os.path.join(directory, FEATURE_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def read_feature_dir(directory, names=None) -> dict[str, RasterGrid]:
    """Load feature grids by manifest order, or only the requested ``names``."""
    from .errors import AssemblyError

    path = os.path.join(directory, FEATURE_MANIFEST)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise AssemblyError(f"feature directory {directory!r} has no manifest") from None
    listed = manifest.get("features", [])
    wanted = listed if names is None else list(names)
    missing = [n for n in wanted if n not in listed]
    if missing:
        raise AssemblyError(f"feature directory is missing grids: {missing}")
    return {
        name: read_raster(os.path.join(directory, f"{name}.bhgr")) for name in wanted
    }
