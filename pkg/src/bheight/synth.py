"""Synthetic city generator for end-to-end pipeline exercise.

Lays out non-overlapping rotated rectangular buildings on a 10 m grid and
renders a multi-date stack of optical bands and SAR polarizations. Building
height is encoded into five designated signals through fixed smooth monotone
response curves plus noise; the remaining bands are height-blind background.

The SAR channels mimic double-bounce displacement: the echo forms a bright
plateau hugging the walls (a few pixels wide, then decaying), while the roof
itself only keeps a damped, per-building-random share of it. The optical
signature is a district-scale field with the same profile, plus a
height-blind per-building roof clutter term on the interior. Footprint
interiors are therefore a noisy height source and the surrounding halo a
clean one; that asymmetry is what buffered sampling and moving-window
prediction exploit. Overlapping fields resolve to the strongest return, not
a sum, so dense blocks do not inflate.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError
from .geometry import Footprint, FootprintSet, Polygon, footprints_to_geojson
from .raster import (
    DEFAULT_NODATA,
    GridGeometry,
    RasterGrid,
    RasterStack,
    buffer_mask,
    rasterize,
    write_raster,
    write_stack_manifest,
)
from .sampling import FeatureTable

PIXEL_SIZE = 10.0
INFORMATIVE_SIGNALS = ("VV", "VH", "B3", "B6", "B8")
OPTICAL_BANDS = ("B3", "B4", "B5", "B6", "B8", "B11")
SAR_BANDS = ("VV", "VH")
LOG_SPAN = 6.7  # normalizes ln(height) into the response curves

PLATEAU_M = 25.0  # halo holds full strength this far from the walls
DECAY_M = 25.0  # e-folding beyond the plateau
REACH_M = 85.0  # field treated as zero past this distance

_BG_LEVELS = {
    "B3": 0.30,
    "B4": 0.24,
    "B5": 0.28,
    "B6": 0.26,
    "B8": 0.40,
    "B11": 0.22,
    "VV": 0.05,
    "VH": 0.035,
}
_SEASON_AMP = {
    "B3": 0.008,
    "B4": 0.010,
    "B5": 0.012,
    "B6": 0.010,
    "B8": 0.015,
    "B11": 0.008,
    "VV": 0.0,
    "VH": 0.0,
}


def _curve(lnh: float) -> float:
    """Fixed smooth monotone response in [0, 1] over the usable height range."""
    z = lnh / LOG_SPAN
    return math.tanh(1.5 * z) / math.tanh(1.5)


def _sar_amp(lnh: float, band: str) -> float:
    if band == "VV":
        return 0.05 + 0.55 * _curve(lnh)
    return 0.03 + 0.38 * _curve(lnh)


def _roof_level(lnh: float, band: str) -> float:
    c = _curve(lnh)
    if band == "B8":
        return 0.42 - 0.28 * c
    if band == "B3":
        return 0.32 - 0.22 * c
    if band == "B6":
        return 0.26 + 0.26 * c
    raise ParameterError(f"band {band!r} has no roof response")


@dataclass
class Building:
    id: str
    polygon: Polygon
    height_m: float
    interior: np.ndarray  # boolean grid mask
    sar_damp: float  # per-building share of the echo left on the roof
    roof_shade: dict  # per-band material brightness offsets


@dataclass
class SynthCity:
    geometry: GridGeometry
    stack: RasterStack
    footprints: FootprintSet
    ndsm: RasterGrid
    regions: FootprintSet
    truth: FeatureTable


def _rect_polygon(cx, cy, length, width, theta_deg) -> Polygon:
    th = math.radians(theta_deg)
    ux, uy = math.cos(th), math.sin(th)
    vx, vy = -uy, ux
    hl, hw = length / 2.0, width / 2.0
    corners = [
        (cx - hl * ux - hw * vx, cy - hl * uy - hw * vy),
        (cx + hl * ux - hw * vx, cy + hl * uy - hw * vy),
        (cx + hl * ux + hw * vx, cy + hl * uy + hw * vy),
        (cx - hl * ux + hw * vx, cy - hl * uy + hw * vy),
    ]
    return Polygon(np.asarray(corners, dtype=np.float64))


def _place_buildings(rng, geom: GridGeometry, n_buildings: int) -> list[Building]:
    extent = geom.cols * geom.pixel_size
    margin = 80.0
    gap = 24.0
    placed = []
    specs = []
    for i in range(n_buildings):
        ok = False
        for _ in range(300):
            width = rng.uniform(14.0, 26.0)
            length = rng.uniform(width, min(3.0 * width, 70.0))
            theta = rng.uniform(0.0, 180.0)
            half_diag = math.hypot(length, width) / 2.0
            cx = rng.uniform(margin + half_diag, extent - margin - half_diag)
            cy = rng.uniform(margin + half_diag, extent - margin - half_diag)
            clear = True
            for (px, py, pd) in placed:
                if math.hypot(cx - px, cy - py) < half_diag + pd + gap:
                    clear = False
                    break
            if clear:
                placed.append((cx, cy, half_diag))
                specs.append((cx, cy, length, width, theta))
                ok = True
                break
        if not ok:
            raise DataError(
                f"could not place building {i + 1} of {n_buildings}; "
                "the requested density is infeasible"
            )
    heights = np.exp(rng.normal(math.log(8.0), 1.0, size=n_buildings))
    heights = np.clip(heights, 1.0, 550.0)
    damps = rng.uniform(0.05, 0.95, size=n_buildings)
    shades = rng.normal(0.0, 0.15, size=(n_buildings, 3))
    buildings = []
    for i, (cx, cy, length, width, theta) in enumerate(specs):
        poly = _rect_polygon(cx, cy, length, width, theta)
        interior = rasterize(poly, geom).bits
        buildings.append(
            Building(
                id=f"b{i:04d}",
                polygon=poly,
                height_m=float(heights[i]),
                interior=interior,
                sar_damp=float(damps[i]),
                roof_shade={
                    band: float(shades[i, k])
                    for k, band in enumerate(("B3", "B6", "B8"))
                },
            )
        )
    return buildings


def _distance_window(geom: GridGeometry, building: Building, reach_m: float):
    """(rows slice, cols slice, distance) to the footprint, 0 inside."""
    x0, y0, x1, y1 = building.polygon.bounds()
    px = geom.pixel_size
    pad = reach_m + px
    c0 = max(0, int((x0 - pad - geom.origin_x) / px))
    c1 = min(geom.cols, int((x1 + pad - geom.origin_x) / px) + 1)
    r0 = max(0, int((geom.origin_y - (y1 + pad)) / px))
    r1 = min(geom.rows, int((geom.origin_y - (y0 - pad)) / px) + 1)
    xs = geom.x_centers()[c0:c1]
    ys = geom.y_centers()[r0:r1]
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    ring = building.polygon.exterior
    nxt = np.roll(ring, -1, axis=0)
    d = nxt - ring
    len2 = np.einsum("ij,ij->i", d, d)
    ap = pts[:, None, :] - ring[None, :, :]
    t = np.clip(np.einsum("nmj,mj->nm", ap, d) / len2[None, :], 0.0, 1.0)
    proj = ring[None, :, :] + t[:, :, None] * d[None, :, :]
    diff = pts[:, None, :] - proj
    dist = np.sqrt(np.einsum("nmj,nmj->nm", diff, diff)).min(axis=1)
    dist = dist.reshape(gy.shape)
    inside = building.interior[r0:r1, c0:c1]
    dist = np.where(inside, 0.0, dist)
    return slice(r0, r1), slice(c0, c1), dist


def generate_city(
    seed: int,
    size: int = 256,
    n_buildings: int = 150,
    n_dates: int = 6,
    nodata_fraction: float = 0.004,
) -> SynthCity:
    """Deterministically render a city; identical seeds give identical bits.

    Parameters
    ----------
    seed : int
    size : int
        Grid side in pixels, at least 64.
    n_buildings : int
        At least 10.
    n_dates : int
        Acquisitions per band; at least 4 so temporal moments are defined.
    nodata_fraction : float
        Fraction of pixels knocked out per layer (cloud/speckle stand-in).
    """
    if size < 64:
        raise ParameterError(f"size must be >= 64 pixels, got {size}")
    if n_buildings < 10:
        raise ParameterError(f"n_buildings must be >= 10, got {n_buildings}")
    if n_dates < 4:
        raise ParameterError(f"n_dates must be >= 4, got {n_dates}")
    if not (0.0 <= nodata_fraction < 0.5):
        raise ParameterError("nodata_fraction must be in [0, 0.5)")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    geom = GridGeometry(
        rows=size, cols=size, origin_x=0.0, origin_y=size * PIXEL_SIZE, pixel_size=PIXEL_SIZE
    )
    buildings = _place_buildings(rng, geom, n_buildings)

    sar_env = {band: np.zeros(geom.shape, dtype=np.float64) for band in SAR_BANDS}
    optical_delta = {band: np.zeros(geom.shape, dtype=np.float64) for band in ("B3", "B6", "B8")}
    for b in buildings:
        lnh = math.log(b.height_m)
        rs, cs, dist = _distance_window(geom, b, reach_m=REACH_M)
        inside = b.interior[rs, cs]
        profile = np.where(
            dist <= PLATEAU_M, 1.0, np.exp(-(dist - PLATEAU_M) / DECAY_M)
        )
        profile = np.where(dist <= REACH_M, profile, 0.0)
        halo = np.where(inside, b.sar_damp, profile)
        for band in SAR_BANDS:
            cand = _sar_amp(lnh, band) * halo
            cur = sar_env[band][rs, cs]
            sar_env[band][rs, cs] = np.maximum(cur, cand)
        field = np.where(inside, 1.0, profile)
        for band in ("B3", "B6", "B8"):
            cand = (_roof_level(lnh, band) - _BG_LEVELS[band]) * field
            cur = optical_delta[band][rs, cs]
            optical_delta[band][rs, cs] = np.where(
                np.abs(cand) > np.abs(cur), cand, cur
            )
    # Height-blind roof clutter: independent material-brightness draws per
    # building and band, confined to that building's own pixels.
    for b in buildings:
        for band in ("B3", "B6", "B8"):
            optical_delta[band][b.interior] += b.roof_shade[band]

    labels = []
    layers = []
    all_bands = OPTICAL_BANDS + SAR_BANDS
    for band in all_bands:
        for t in range(n_dates):
            season = _SEASON_AMP[band] * math.sin(2.0 * math.pi * t / n_dates)
            if band in SAR_BANDS:
                base = _BG_LEVELS[band] + rng.normal(0.0, 0.002)
                vals = base + sar_env[band] + rng.normal(0.0, 0.005, size=geom.shape)
            else:
                base = _BG_LEVELS[band] + season + rng.normal(0.0, 0.003)
                vals = base + rng.normal(0.0, 0.015, size=geom.shape)
                if band in optical_delta:
                    vals = vals + optical_delta[band]
            vals = np.maximum(vals, 1e-3)
            if nodata_fraction > 0:
                knockout = rng.random(geom.shape) < nodata_fraction
                vals = np.where(knockout, DEFAULT_NODATA, vals)
            labels.append((band, t))
            layers.append(RasterGrid(geom, vals.astype(np.float32), DEFAULT_NODATA))
    stack = RasterStack(labels, layers)

    ground = np.clip(rng.normal(0.05, 0.15, size=geom.shape), 0.0, None)
    ndsm_vals = ground
    for b in buildings:
        roughness = rng.normal(0.0, 0.3, size=int(b.interior.sum()))
        ndsm_vals[b.interior] = np.maximum(b.height_m + roughness, 0.5)
        cells = np.flatnonzero(b.interior.ravel())
        if b.height_m > 30.0 and cells.size >= 6:
            spike = cells[int(rng.integers(0, cells.size))]
            ndsm_vals.ravel()[spike] = b.height_m * 1.35
    ndsm = RasterGrid(geom, ndsm_vals.astype(np.float32), DEFAULT_NODATA)

    footprints = FootprintSet(
        Footprint(b.id, b.polygon, ref_height_m=None) for b in buildings
    )

    extent = size * PIXEL_SIZE
    half = extent / 2.0
    quadrants = []
    for qi, (x0, y0) in enumerate([(0, 0), (half, 0), (0, half), (half, half)]):
        ring = [(x0, y0), (x0 + half, y0), (x0 + half, y0 + half), (x0, y0 + half)]
        quadrants.append(Footprint(f"q{qi}", Polygon(np.asarray(ring, dtype=np.float64))))
    regions = FootprintSet(quadrants)

    truth = _truth_table(geom, stack, buildings)
    _self_check(truth)
    return SynthCity(
        geometry=geom,
        stack=stack,
        footprints=footprints,
        ndsm=ndsm,
        regions=regions,
        truth=truth,
    )


def _truth_table(geom, stack, buildings) -> FeatureTable:
    """Observable per-building signal levels at the first date, plus height.

    Levels are medians over the halo ring just outside the walls, where the
    rendered neighborhood fields are clean; they measure what the rasters
    actually carry, pixel noise included.
    """
    first = {band: dict(stack.layers_for(band))[0] for band in INFORMATIVE_SIGNALS}
    columns = ["height_m", "ln_height"] + [f"{b}_level" for b in INFORMATIVE_SIGNALS]
    rows = []
    for b in buildings:
        lnh = math.log(b.height_m)
        interior_mask = b.interior
        halo = buffer_mask(
            rasterize(b.polygon, geom), 20.0
        ).bits & ~interior_mask
        row = [b.height_m, lnh]
        for band in INFORMATIVE_SIGNALS:
            grid = first[band]
            vals = grid.values[halo & grid.valid_mask()]
            row.append(float(np.median(vals)) if vals.size else float("nan"))
        rows.append(row)
    ids = [b.id for b in buildings]
    table = np.asarray(rows, dtype=np.float64)
    # NaN cells are not allowed in tables; a building fully knocked out by
    # the nodata speckle at date 0 would be a generator bug anyway.
    if np.isnan(table).any():
        raise DataError("truth table has empty signal observations")
    return FeatureTable(columns, ids, table)


def _rank_correlation(a: np.ndarray, b: np.ndarray) -> float:
    ra = np.argsort(np.argsort(a)).astype(np.float64)
    rb = np.argsort(np.argsort(b)).astype(np.float64)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float((ra**2).sum()) * float((rb**2).sum()))
    return float((ra * rb).sum() / denom)


def _self_check(truth: FeatureTable) -> None:
    """Each informative signal must track height strongly in the truth table."""
    h = truth.column("height_m")
    for band in INFORMATIVE_SIGNALS:
        rho = _rank_correlation(h, truth.column(f"{band}_level"))
        if abs(rho) < 0.8:
            raise DataError(
                f"generator self-check failed: |rank corr| of {band} level vs "
                f"height is {abs(rho):.3f} < 0.8"
            )


def write_city(city: SynthCity, directory) -> dict:
    """Write stacks + manifest, footprints, nDSM, regions, and the truth table.

    Returns the paths keyed by role.
    """
    import json

    os.makedirs(directory, exist_ok=True)
    manifest = write_stack_manifest(city.stack, directory)
    fp_path = os.path.join(directory, "footprints.geojson")
    with open(fp_path, "w", encoding="utf-8") as fh:
        json.dump(footprints_to_geojson(city.footprints), fh)
        fh.write("\n")
    region_path = os.path.join(directory, "regions.geojson")
    with open(region_path, "w", encoding="utf-8") as fh:
        json.dump(footprints_to_geojson(city.regions), fh)
        fh.write("\n")
    ndsm_path = os.path.join(directory, "ndsm.bhgr")
    write_raster(city.ndsm, ndsm_path)
    truth_path = os.path.join(directory, "truth.csv")
    city.truth.write_csv(truth_path)
    return {
        "stack_manifest": manifest,
        "footprints": fp_path,
        "regions": region_path,
        "ndsm": ndsm_path,
        "truth": truth_path,
    }
