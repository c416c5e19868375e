"""Zonal sampling, target binning, splits, and table IO."""

import math

import numpy as np
import pytest

from bheight.errors import DataError, GeometryError, ParameterError, ValidationError
from bheight.geometry import FootprintSet
from bheight.raster import MaskGrid, RasterGrid, buffer_mask, rasterize
from bheight.sampling import (
    HEIGHT_COLUMN,
    LOG_HEIGHT_COLUMN,
    FeatureTable,
    assemble_samples,
    log_height,
    prepare_training,
    reference_height,
    split_table,
    zonal_median,
)

from conftest import make_geom, make_grid, square_footprint


def full_mask(geom):
    return MaskGrid(geom, np.ones(geom.shape, dtype=bool))


# ---------------------------------------------------------------------------
# Zonal median and reference height
# ---------------------------------------------------------------------------


def test_zonal_median_constant():
    grid = make_grid(np.full((3, 3), 3.3))
    assert zonal_median(grid, full_mask(grid.geometry)) == pytest.approx(3.3, rel=1e-6)


def test_zonal_median_sorted_middle():
    grid = make_grid(np.array([[1.0, 2.0, 100.0]]))
    assert zonal_median(grid, full_mask(grid.geometry)) == 2.0


def test_zonal_median_skips_nodata():
    grid = make_grid(np.array([[1.0, -9999.0, 100.0]]))
    assert zonal_median(grid, full_mask(grid.geometry)) == 50.5


def test_zonal_median_empty_mask_is_none():
    grid = make_grid(np.ones((2, 2)))
    mask = MaskGrid(grid.geometry, np.zeros((2, 2), dtype=bool))
    assert zonal_median(grid, mask) is None


def test_zonal_median_requires_alignment():
    grid = make_grid(np.ones((2, 2)))
    mask = MaskGrid(make_geom(3, 3), np.ones((3, 3), dtype=bool))
    with pytest.raises(GeometryError):
        zonal_median(grid, mask)


def test_reference_height_flat_roof():
    ndsm = make_grid(np.full((10, 10), 12.0))
    fp = square_footprint("a", 20, 20, 40)
    assert reference_height(ndsm, fp) == 12.0


def test_reference_height_median_ignores_antenna():
    vals = np.zeros((4, 4), dtype=np.float32)
    vals[1, 1] = 10.0
    vals[1, 2] = 10.0
    vals[2, 1] = 30.0
    ndsm = make_grid(vals)
    fp = square_footprint("a", 10, 10, 20)
    # Footprint covers pixels (1,1),(1,2),(2,1),(2,2): {10, 10, 30, 0}.
    assert reference_height(ndsm, fp) == 10.0


def test_reference_height_off_raster_is_none():
    ndsm = make_grid(np.full((4, 4), 5.0))
    fp = square_footprint("far", 900, 900, 20)
    assert reference_height(ndsm, fp) is None


# ---------------------------------------------------------------------------
# Sample assembly
# ---------------------------------------------------------------------------


def _constant_features(geom, levels):
    return {name: RasterGrid(geom, np.full(geom.shape, v, dtype=np.float32)) for name, v in levels.items()}


def test_assemble_buffer_zero_constant_grids():
    geom = make_geom(12, 12)
    feats = _constant_features(geom, {"f1": 1.5, "f2": -2.0})
    fps = FootprintSet(
        [
            square_footprint("a", 10, 10, 30, ref_height_m=8.0),
            square_footprint("b", 70, 70, 30, ref_height_m=20.0),
        ]
    )
    table, report = assemble_samples(feats, fps, buffer_m=0.0)
    assert report.kept == ["a", "b"]
    assert table.columns == [
        "f1",
        "f2",
        "MBG_Width",
        "MBG_Length",
        "MBG_Orientation",
        "Near_Distance",
        HEIGHT_COLUMN,
    ]
    row = dict(zip(table.columns, table.values[0]))
    assert row["f1"] == pytest.approx(1.5)
    assert row["f2"] == pytest.approx(-2.0)
    assert row["MBG_Width"] == pytest.approx(30.0)
    assert row["MBG_Length"] == pytest.approx(30.0)
    assert row[HEIGHT_COLUMN] == 8.0
    assert row["Near_Distance"] == pytest.approx(math.hypot(40, 40) - math.hypot(0, 0), abs=20)


def test_assemble_buffered_zone_matches_mask_composition(rng):
    geom = make_geom(20, 20)
    vals = rng.normal(size=(20, 20)).astype(np.float32)
    feats = {"f": RasterGrid(geom, vals)}
    fps = FootprintSet(
        [
            square_footprint("a", 40, 40, 30, ref_height_m=5.0),
            square_footprint("b", 130, 130, 30, ref_height_m=6.0),
        ]
    )
    table, _ = assemble_samples(feats, fps, buffer_m=50.0)
    zone = buffer_mask(rasterize(fps[0].polygon, geom), 50.0)
    expected = float(np.median(vals[zone.bits]))
    assert table.column("f")[0] == expected


def test_assemble_prefers_surface_over_attribute():
    geom = make_geom(10, 10)
    feats = _constant_features(geom, {"f": 1.0})
    ndsm = make_grid(np.full((10, 10), 33.0))
    fps = FootprintSet(
        [
            square_footprint("a", 10, 10, 30, ref_height_m=5.0),
            square_footprint("b", 60, 60, 30, ref_height_m=6.0),
        ]
    )
    table, _ = assemble_samples(feats, fps, buffer_m=0.0, ndsm=ndsm)
    assert list(table.y) == [33.0, 33.0]


def test_assemble_drop_reasons():
    geom = make_geom(10, 10)
    nodata_patch = np.full((10, 10), 2.0, dtype=np.float32)
    nodata_patch[0:4, 0:4] = -9999.0
    feats = {"f": RasterGrid(make_geom(10, 10), nodata_patch)}
    fps = FootprintSet(
        [
            square_footprint("tiny", 51, 51, 2, ref_height_m=3.0),
            square_footprint("hole", 5, 65, 30, ref_height_m=3.0),
            square_footprint("noref", 60, 20, 20),
            square_footprint("good", 60, 60, 20, ref_height_m=4.0),
        ]
    )
    table, report = assemble_samples(feats, fps, buffer_m=0.0)
    reasons = dict(report.dropped)
    assert reasons["tiny"] == "sub-pixel footprint"
    assert "f" in reasons["hole"]
    assert "reference" in reasons["noref"]
    assert report.kept == ["good"]
    assert table.n_rows == 1


def test_assemble_single_footprint_lacks_near_distance():
    geom = make_geom(8, 8)
    feats = _constant_features(geom, {"f": 1.0})
    fps = FootprintSet([square_footprint("only", 20, 20, 30, ref_height_m=5.0)])
    table, report = assemble_samples(feats, fps, buffer_m=0.0)
    assert table.n_rows == 0
    assert report.dropped == [("only", "no neighbor for Near_Distance")]


def test_assemble_rejects_negative_buffer():
    geom = make_geom(4, 4)
    feats = _constant_features(geom, {"f": 1.0})
    with pytest.raises(ParameterError):
        assemble_samples(feats, FootprintSet([]), buffer_m=-1.0)


def test_assemble_rejects_misaligned_feature():
    feats = {
        "a": make_grid(np.ones((4, 4))),
        "b": make_grid(np.ones((5, 5))),
    }
    with pytest.raises(GeometryError):
        assemble_samples(feats, FootprintSet([]), buffer_m=0.0)


# ---------------------------------------------------------------------------
# Log transform and binning
# ---------------------------------------------------------------------------


def test_log_height_clamps_below_one_meter():
    assert log_height([0.5])[0] == 0.0
    assert log_height([1.0])[0] == 0.0
    assert log_height([math.e])[0] == pytest.approx(1.0)


def _table_from_heights(heights, feature=None):
    heights = np.asarray(heights, dtype=np.float64)
    feature = np.arange(len(heights), dtype=np.float64) if feature is None else np.asarray(feature)
    values = np.column_stack([feature, heights])
    ids = [f"r{i}" for i in range(len(heights))]
    return FeatureTable(["f", HEIGHT_COLUMN], ids, values, target=HEIGHT_COLUMN)


def test_binning_three_rows_one_bin():
    heights = [math.exp(2.003), math.exp(2.007), math.exp(2.009)]
    table = _table_from_heights(heights, feature=[5.0, 9.0, 7.0])
    binned = prepare_training(table, lo_pct=0.0, hi_pct=100.0, bin_step=0.01)
    assert binned.table.n_rows == 1
    assert binned.bin_index[0] == 200
    assert binned.table.y[0] == pytest.approx(2.007, abs=1e-12)
    assert binned.table.column("f")[0] == 7.0
    assert binned.source_count[0] == 3
    assert binned.table.target == LOG_HEIGHT_COLUMN


def test_binning_equal_heights_single_bin():
    table = _table_from_heights([7.0] * 9)
    binned = prepare_training(table)
    assert binned.table.n_rows == 1
    assert binned.table.y[0] == pytest.approx(math.log(7.0))


def test_binning_member_medians_recomputed(rng):
    heights = rng.lognormal(mean=2.0, sigma=0.8, size=300).clip(1.0, 500.0)
    feature = rng.normal(size=300)
    table = _table_from_heights(heights, feature=feature)
    binned = prepare_training(table, lo_pct=0.0, hi_pct=100.0, bin_step=0.01)
    transformed = log_height(heights)
    bins = np.floor(transformed / 0.01).astype(np.int64)
    for i, b in enumerate(binned.bin_index):
        members = bins == b
        assert binned.table.y[i] == np.median(transformed[members])
        assert binned.table.column("f")[i] == np.median(feature[members])
    assert binned.table.n_rows <= min(len(heights), math.ceil(transformed.max() / 0.01) + 1)


def test_binning_percentile_clip_drops_outliers():
    heights = [10.0] * 98 + [1.0, 100000.0]
    table = _table_from_heights(heights)
    binned = prepare_training(table, lo_pct=1.0, hi_pct=99.0)
    assert binned.source_count.sum() == 98


def test_binning_rejects_degenerate_inputs():
    table = _table_from_heights([2.0, 3.0])
    with pytest.raises(ParameterError):
        prepare_training(table, lo_pct=50.0, hi_pct=50.0)
    with pytest.raises(ParameterError):
        prepare_training(table, bin_step=0.0)
    no_target = FeatureTable(["f"], ["a"], np.array([[1.0]]))
    with pytest.raises(DataError):
        prepare_training(no_target)


def test_binning_is_anchored_at_zero():
    table = _table_from_heights([1.004, 1.005])
    binned = prepare_training(table, lo_pct=0.0, hi_pct=100.0, bin_step=0.01)
    assert binned.bin_index[0] == 0
    assert binned.table.ids[0] == "bin_0"


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def _rand_table(n, rng):
    values = np.column_stack([rng.normal(size=n), rng.uniform(1, 50, size=n)])
    return FeatureTable(
        ["f", HEIGHT_COLUMN], [f"r{i}" for i in range(n)], values, target=HEIGHT_COLUMN
    )


def test_split_counts_and_reproducibility(rng):
    table = _rand_table(10, rng)
    train, test = split_table(table, 0.2, seed=42)
    assert (train.n_rows, test.n_rows) == (8, 2)
    train2, test2 = split_table(table, 0.2, seed=42)
    assert train.ids == train2.ids and test.ids == test2.ids
    assert set(train.ids) | set(test.ids) == set(table.ids)
    assert not set(train.ids) & set(test.ids)


def test_split_tiny_fraction_keeps_one_test_row(rng):
    table = _rand_table(100, rng)
    train, test = split_table(table, 0.001, seed=0)
    assert test.n_rows == 1
    assert train.n_rows == 99


def test_split_different_seeds_differ(rng):
    table = _rand_table(1000, rng)
    _, test_a = split_table(table, 0.3, seed=1)
    _, test_b = split_table(table, 0.3, seed=2)
    assert test_a.ids != test_b.ids


def test_split_validation():
    rng = np.random.default_rng(0)
    table = _rand_table(5, rng)
    with pytest.raises(ParameterError):
        split_table(table, 0.0, seed=0)
    with pytest.raises(ParameterError):
        split_table(table, 1.0, seed=0)
    one = table.take([0])
    with pytest.raises(DataError):
        split_table(one, 0.5, seed=0)


# ---------------------------------------------------------------------------
# FeatureTable mechanics and CSV IO
# ---------------------------------------------------------------------------


def test_table_rejects_nan_and_duplicates():
    with pytest.raises(ValidationError):
        FeatureTable(["a"], ["r"], np.array([[np.nan]]))
    with pytest.raises(ValidationError):
        FeatureTable(["a", "a"], ["r"], np.array([[1.0, 2.0]]))
    with pytest.raises(ValidationError):
        FeatureTable(["a"], ["r", "s"], np.array([[1.0]]))


def test_table_select_and_take(rng):
    table = _rand_table(6, rng)
    sub = table.select(["f"])
    assert sub.columns == ["f", HEIGHT_COLUMN]
    assert sub.target == HEIGHT_COLUMN
    with pytest.raises(DataError):
        table.select(["missing"])
    taken = table.take([3, 1])
    assert taken.ids == ["r3", "r1"]
    assert np.array_equal(taken.values, table.values[[3, 1]])


def test_table_x_excludes_target(rng):
    table = _rand_table(4, rng)
    assert table.X.shape == (4, 1)
    no_target = FeatureTable(["a"], ["r"], np.array([[1.0]]))
    with pytest.raises(DataError):
        no_target.y


def test_table_csv_round_trip_lossless(tmp_path, rng):
    values = np.column_stack(
        [rng.normal(size=20) * 1e-7, rng.normal(size=20) * 1e9, rng.uniform(1, 2, 20)]
    )
    table = FeatureTable(
        ["a", "b", HEIGHT_COLUMN],
        [f"r{i}" for i in range(20)],
        values,
        target=HEIGHT_COLUMN,
    )
    path = tmp_path / "t.csv"
    table.write_csv(path)
    back = FeatureTable.read_csv(path, target=HEIGHT_COLUMN)
    assert back.columns == table.columns
    assert back.ids == table.ids
    assert np.array_equal(back.values, table.values)


def test_table_csv_malformed_inputs(tmp_path):
    bad_header = tmp_path / "h.csv"
    bad_header.write_text("name,a\nr,1\n")
    with pytest.raises(DataError, match="'id'"):
        FeatureTable.read_csv(bad_header)
    bad_width = tmp_path / "w.csv"
    bad_width.write_text("id,a,b\nr,1\n")
    with pytest.raises(DataError, match=":2"):
        FeatureTable.read_csv(bad_width)
    bad_float = tmp_path / "f.csv"
    bad_float.write_text("id,a\nr,xyz\n")
    with pytest.raises(DataError):
        FeatureTable.read_csv(bad_float)
