"""Sample assembly: zonal medians per footprint, target binning, table IO.

A :class:`FeatureTable` is an ordered, id-keyed matrix of float features with
an optional target column. Tables never contain NaN cells; rows that would
need one are dropped during assembly and reported with a reason.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AssemblyError,
    DataError,
    GeometryError,
    ParameterError,
    ValidationError,
)
from .features import GEOMETRY_FEATURES
from .geometry import min_bounding_rect, near_distance_table
from .raster import MaskGrid, RasterGrid, buffer_mask, percentile, rasterize

HEIGHT_COLUMN = "Height"
LOG_HEIGHT_COLUMN = "LHeight"


@dataclass
class FeatureTable:
    """Float matrix with named columns, string row ids, optional target column."""

    columns: list[str]
    ids: list[str]
    values: np.ndarray
    target: str | None = None

    def __post_init__(self):
        self.columns = list(self.columns)
        self.ids = [str(i) for i in self.ids]
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError("table values must be a 2-D matrix")
        if self.values.shape != (len(self.ids), len(self.columns)):
            raise ValidationError(
                f"table shape {self.values.shape} does not match "
                f"{len(self.ids)} ids x {len(self.columns)} columns"
            )
        if len(set(self.columns)) != len(self.columns):
            raise ValidationError("duplicate column names")
        if np.isnan(self.values).any():
            raise ValidationError("tables must not contain NaN cells")
        if self.target is not None and self.target not in self.columns:
            raise ValidationError(f"target column {self.target!r} not in table")

    @property
    def n_rows(self) -> int:
        return len(self.ids)

    def feature_columns(self) -> list[str]:
        return [c for c in self.columns if c != self.target]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.columns.index(name)
        except ValueError:
            raise DataError(f"no column named {name!r}") from None
        return self.values[:, j]

    @property
    def X(self) -> np.ndarray:
        cols = [self.columns.index(c) for c in self.feature_columns()]
        return self.values[:, cols]

    @property
    def y(self) -> np.ndarray:
        if self.target is None:
            raise DataError("table has no target column")
        return self.column(self.target)

    def select(self, feature_names) -> "FeatureTable":
        """Restrict to the named feature columns (target retained if set)."""
        wanted = list(feature_names)
        missing = [c for c in wanted if c not in self.columns]
        if missing:
            raise DataError(f"table is missing columns: {missing}")
        cols = wanted + ([self.target] if self.target and self.target not in wanted else [])
        idx = [self.columns.index(c) for c in cols]
        return FeatureTable(cols, list(self.ids), self.values[:, idx], self.target)

    def take(self, row_indices) -> "FeatureTable":
        rows = np.asarray(row_indices, dtype=int)
        return FeatureTable(
            list(self.columns),
            [self.ids[i] for i in rows],
            self.values[rows],
            self.target,
        )

    def write_csv(self, path) -> None:
        """CSV with an ``id`` first column; floats via repr so reads are lossless."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id"] + self.columns)
            for i, row in enumerate(self.values):
                writer.writerow([self.ids[i]] + [repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, path, target: str | None = None) -> "FeatureTable":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty CSV") from None
            if not header or header[0] != "id":
                raise DataError(f"{path}: first CSV column must be 'id'")
            columns = header[1:]
            ids = []
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != len(header):
                    raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
                ids.append(rec[0])
                try:
                    rows.append([float(v) for v in rec[1:]])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
        values = np.asarray(rows, dtype=np.float64).reshape(len(ids), len(columns))
        return cls(columns, ids, values, target)


@dataclass
class AssemblyReport:
    """Which footprints made it into the table, and why the others did not."""

    kept: list[str] = field(default_factory=list)
    dropped: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class BinnedTable:
    """Per-bin medians of training rows, ordered by bin index.

    Bins are half-open ``[k * step, (k + 1) * step)`` anchored at 0 over the
    log-transformed target; ``source_count[i]`` is how many raw rows fed row i.
    """

    table: FeatureTable
    bin_step: float
    bin_index: np.ndarray
    source_count: np.ndarray

    def __post_init__(self):
        self.bin_index = np.asarray(self.bin_index, dtype=np.int64)
        self.source_count = np.asarray(self.source_count, dtype=np.int64)
        if not (np.diff(self.bin_index) > 0).all():
            raise ValidationError("bin indices must be strictly increasing")
        t = self.table.y
        lo = self.bin_index * self.bin_step
        hi = (self.bin_index + 1) * self.bin_step
        if not ((t >= lo) & (t < hi)).all():
            raise ValidationError("a bin target lies outside its half-open bin")


def zonal_median(grid: RasterGrid, mask: MaskGrid) -> float | None:
    """Median of valid grid values under the mask; ``None`` when empty."""
    if not grid.geometry.aligned_with(mask.geometry):
        raise GeometryError("zonal median requires aligned grid and mask")
    vals = grid.values[mask.bits & grid.valid_mask()]
    if vals.size == 0:
        return None
    return float(np.median(vals))


def reference_height(ndsm: RasterGrid, footprint) -> float | None:
    """Median surface height over a footprint's own pixels (no buffering)."""
    mask = rasterize(footprint.polygon, ndsm.geometry)
    if not mask.any():
        return None
    return zonal_median(ndsm, mask)


def assemble_samples(
    features: dict[str, RasterGrid],
    footprints,
    buffer_m: float,
    ndsm: RasterGrid | None = None,
    target_column: str = HEIGHT_COLUMN,
) -> tuple[FeatureTable, AssemblyReport]:
    """One row per usable footprint: buffered zonal medians plus geometry.

    Raster features are the median of each grid over the footprint dilated by
    ``buffer_m``. Geometry columns (minimum-bounding-rectangle width, length,
    orientation, nearest-neighbor distance) come straight from the polygons.
    The target is the footprint's reference height: the nDSM median over the
    undilated footprint when ``ndsm`` is given, else the ``ref_height_m``
    attribute. Footprints that cannot fill every cell are dropped and
    reported.
    """
    if buffer_m < 0:
        raise ParameterError(f"buffer_m must be >= 0, got {buffer_m}")
    features = dict(features)
    if not features:
        raise AssemblyError("no feature grids supplied")
    geom = next(iter(features.values())).geometry
    for name, grid in features.items():
        if not grid.geometry.aligned_with(geom):
            raise GeometryError(f"feature grid {name!r} is not aligned with the rest")
    if ndsm is not None and not ndsm.geometry.aligned_with(geom):
        raise GeometryError("reference surface is not aligned with feature grids")
    feature_names = list(features.keys())
    columns = feature_names + list(GEOMETRY_FEATURES) + [target_column]
    near = near_distance_table(footprints)
    report = AssemblyReport()
    ids: list[str] = []
    rows: list[list[float]] = []
    for fp in footprints:
        fp_mask = rasterize(fp.polygon, geom)
        if not fp_mask.any():
            report.dropped.append((fp.id, "sub-pixel footprint"))
            continue
        if ndsm is not None:
            target = zonal_median(ndsm, fp_mask)
            if target is None:
                report.dropped.append((fp.id, "no reference surface coverage"))
                continue
        elif fp.ref_height_m is not None:
            target = fp.ref_height_m
        else:
            report.dropped.append((fp.id, "no reference height"))
            continue
        zone = buffer_mask(fp_mask, buffer_m)
        row = []
        bad = None
        for name in feature_names:
            med = zonal_median(features[name], zone)
            if med is None:
                bad = f"no valid pixels for {name}"
                break
            row.append(med)
        if bad is not None:
            report.dropped.append((fp.id, bad))
            continue
        nd = near.get(fp.id)
        if nd is None:
            report.dropped.append((fp.id, "no neighbor for Near_Distance"))
            continue
        mbg = min_bounding_rect(fp.polygon)
        row.extend([mbg.width_m, mbg.length_m, mbg.orientation_deg, nd])
        row.append(float(target))
        ids.append(fp.id)
        rows.append(row)
        report.kept.append(fp.id)
    values = np.asarray(rows, dtype=np.float64).reshape(len(ids), len(columns))
    table = FeatureTable(columns, ids, values, target=target_column)
    return table, report


def log_height(values) -> np.ndarray:
    """Natural log of heights clamped below at 1 m, so the transform is total."""
    arr = np.asarray(values, dtype=np.float64)
    return np.log(np.maximum(arr, 1.0))


def prepare_training(
    table: FeatureTable,
    lo_pct: float = 1.0,
    hi_pct: float = 99.0,
    bin_step: float = 0.01,
) -> BinnedTable:
    """Clip target outliers, log the target, and median-aggregate into bins.

    Steps: keep rows whose target lies inside the inclusive
    [``lo_pct``, ``hi_pct``] percentile band; transform targets with
    ``ln(max(t, 1))``; assign half-open bins of width ``bin_step`` anchored at
    0; reduce each occupied bin to the per-column median of its member rows.
    The result's target column is renamed from ``Height`` to ``LHeight``.
    """
    if table.target is None:
        raise DataError("binning requires a table with a target column")
    if table.n_rows == 0:
        raise DataError("binning requires a non-empty table")
    if not (0.0 <= lo_pct < hi_pct <= 100.0):
        raise ParameterError(f"bad percentile band ({lo_pct}, {hi_pct})")
    if not (bin_step > 0):
        raise ParameterError(f"bin_step must be > 0, got {bin_step}")
    t = table.y
    lo, hi = percentile(t, [lo_pct, hi_pct])
    keep = np.flatnonzero((t >= lo) & (t <= hi))
    if keep.size == 0:
        raise DataError("percentile clip removed every row")
    kept = table.take(keep)
    transformed = log_height(kept.y)
    bins = np.floor(transformed / bin_step).astype(np.int64)
    feature_names = kept.feature_columns()
    fcols = [kept.columns.index(c) for c in feature_names]
    out_rows = []
    out_bins = []
    out_counts = []
    for b in np.unique(bins):
        members = np.flatnonzero(bins == b)
        feats = np.median(kept.values[np.ix_(members, fcols)], axis=0)
        target = float(np.median(transformed[members]))
        out_rows.append(np.append(feats, target))
        out_bins.append(int(b))
        out_counts.append(len(members))
    columns = feature_names + [LOG_HEIGHT_COLUMN]
    ids = [f"bin_{b}" for b in out_bins]
    values = np.asarray(out_rows, dtype=np.float64)
    binned = FeatureTable(columns, ids, values, target=LOG_HEIGHT_COLUMN)
    return BinnedTable(
        table=binned,
        bin_step=bin_step,
        bin_index=np.asarray(out_bins),
        source_count=np.asarray(out_counts),
    )


def split_table(
    table: FeatureTable, test_fraction: float, seed: int
) -> tuple[FeatureTable, FeatureTable]:
    """Seeded shuffle split; both sides are non-empty or the call fails."""
    if table.n_rows < 2:
        raise DataError("need at least 2 rows to split")
    if not (0.0 < test_fraction < 1.0):
        raise ParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = table.n_rows
    n_test = min(max(1, math.ceil(n * test_fraction)), n - 1)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    perm = rng.permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return table.take(train_idx), table.take(test_idx)
