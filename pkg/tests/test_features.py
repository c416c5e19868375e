"""Spectral indices, temporal statistics, and the feature recipe."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bheight.errors import (
    AssemblyError,
    GeometryError,
    ParameterError,
    RecipeError,
)
from bheight.features import (
    ALL_STATS,
    DEFAULT_SIGNALS,
    GEOMETRY_FEATURES,
    FeatureRecipe,
    StatKind,
    build_feature_rasters,
    burn_geometry_rasters,
    default_recipe,
    normalized_difference,
    read_feature_dir,
    signal_series,
    temporal_stat,
    vvh_index,
    write_feature_dir,
)
from bheight.features import _nan_percentile_planes
from bheight.geometry import FootprintSet
from bheight.raster import RasterGrid, RasterStack

from conftest import make_geom, make_grid, square_footprint


def const_grid(value, rows=3, cols=3):
    return make_grid(np.full((rows, cols), value, dtype=np.float32))


def series_stack(band, values_by_date, rows=2, cols=2):
    """Stack holding one band whose every pixel follows the given series."""
    labels, layers = [], []
    for t, v in enumerate(values_by_date):
        labels.append((band, t))
        layers.append(const_grid(v, rows, cols))
    return RasterStack(labels, layers)


# ---------------------------------------------------------------------------
# Normalized difference
# ---------------------------------------------------------------------------


def test_nd_equal_inputs_give_zero():
    out = normalized_difference(const_grid(0.4), const_grid(0.4))
    assert np.all(out.values == 0.0)


def test_nd_frozen_ndvi_value():
    out = normalized_difference(const_grid(0.8), const_grid(0.4))
    assert out.values[0, 0] == pytest.approx(0.4 / 1.2, rel=1e-6)


def test_nd_frozen_mndwi_value():
    out = normalized_difference(const_grid(0.3), const_grid(0.1))
    assert out.values[0, 0] == pytest.approx(0.5, rel=1e-6)


def test_nd_antisymmetric(rng):
    a = make_grid(rng.uniform(0.05, 1.0, size=(5, 5)).astype(np.float32))
    b = make_grid(rng.uniform(0.05, 1.0, size=(5, 5)).astype(np.float32))
    ab = normalized_difference(a, b)
    ba = normalized_difference(b, a)
    assert np.allclose(ab.values, -ba.values, atol=1e-7)


def test_nd_zero_sum_is_nodata():
    a = make_grid(np.array([[0.5, 0.0]], dtype=np.float32))
    b = make_grid(np.array([[-0.5, 0.0]], dtype=np.float32))
    out = normalized_difference(a, b)
    assert not out.valid_mask().any()


def test_nd_propagates_nodata():
    a = make_grid(np.array([[0.5, -9999.0]], dtype=np.float32))
    b = make_grid(np.array([[0.25, 0.25]], dtype=np.float32))
    out = normalized_difference(a, b)
    assert list(out.valid_mask()[0]) == [True, False]


def test_nd_requires_aligned_grids():
    a = make_grid(np.ones((2, 2)))
    b = make_grid(np.ones((3, 3)))
    with pytest.raises(GeometryError):
        normalized_difference(a, b)


@settings(max_examples=50, deadline=None)
@given(
    a=st.floats(min_value=0.0, max_value=10.0),
    b=st.floats(min_value=0.0, max_value=10.0),
)
def test_nd_bounded_for_nonnegative_inputs(a, b):
    out = normalized_difference(const_grid(a, 1, 1), const_grid(b, 1, 1))
    if out.valid_mask()[0, 0]:
        assert -1.0 <= out.values[0, 0] <= 1.0


# ---------------------------------------------------------------------------
# VVH index
# ---------------------------------------------------------------------------


def test_vvh_frozen_value():
    out = vvh_index(const_grid(0.5), const_grid(3.0), gamma=2.0)
    assert out.values[0, 0] == pytest.approx(4.0, rel=1e-6)


def test_vvh_gamma_one_reduces_to_vv(rng):
    vv = make_grid(rng.uniform(0, 1, size=(4, 4)).astype(np.float32))
    vh = make_grid(rng.uniform(0, 1, size=(4, 4)).astype(np.float32))
    out = vvh_index(vv, vh, gamma=1.0)
    assert np.array_equal(out.values, vv.values)


def test_vvh_zero_vh_reduces_to_vv(rng):
    vv = make_grid(rng.uniform(0, 1, size=(4, 4)).astype(np.float32))
    vh = make_grid(np.zeros((4, 4), dtype=np.float32))
    out = vvh_index(vv, vh, gamma=10.0)
    assert np.array_equal(out.values, vv.values)


def test_vvh_rejects_nonpositive_gamma():
    with pytest.raises(ParameterError):
        vvh_index(const_grid(0.5), const_grid(0.5), gamma=0.0)


def test_vvh_propagates_nodata():
    vv = make_grid(np.array([[0.5, -9999.0]], dtype=np.float32))
    vh = make_grid(np.array([[0.5, 0.5]], dtype=np.float32))
    assert list(vvh_index(vv, vh).valid_mask()[0]) == [True, False]


# ---------------------------------------------------------------------------
# Temporal statistics
# ---------------------------------------------------------------------------


def test_temporal_stat_frozen_series():
    stack = series_stack("VV", [1.0, 2.0, 3.0, 4.0, 100.0])
    expect = {
        StatKind.P0: 1.0,
        StatKind.P10: 1.4,
        StatKind.P25: 2.0,
        StatKind.MEDIAN: 3.0,
        StatKind.P75: 4.0,
        StatKind.P90: 61.6,
        StatKind.P100: 100.0,
        StatKind.MEAN: 22.0,
        StatKind.IQR: 2.0,
    }
    for stat, value in expect.items():
        out = temporal_stat(stack, "VV", stat)
        assert out.values[0, 0] == pytest.approx(value, rel=1e-6), stat


def test_temporal_stat_constant_series_moments():
    stack = series_stack("VV", [2.0] * 5)
    assert temporal_stat(stack, "VV", StatKind.MEAN).values[0, 0] == 2.0
    assert temporal_stat(stack, "VV", StatKind.MEDIAN).values[0, 0] == 2.0
    assert temporal_stat(stack, "VV", StatKind.STDDEV).values[0, 0] == 0.0
    # Variance below threshold: shape statistics are undefined, not zero.
    assert not temporal_stat(stack, "VV", StatKind.SKEW).valid_mask().any()
    assert not temporal_stat(stack, "VV", StatKind.KURTOSIS).valid_mask().any()


def test_temporal_stat_symmetric_series_has_zero_skew():
    stack = series_stack("VV", [1.0, 2.0, 3.0])
    out = temporal_stat(stack, "VV", StatKind.SKEW)
    assert out.values[0, 0] == pytest.approx(0.0, abs=1e-7)


def test_temporal_stat_excess_kurtosis():
    # Two-point symmetric distribution has kurtosis 1 - 3 = -2, but needs
    # n >= 3, so repeat the pattern.
    stack = series_stack("VV", [1.0, 3.0, 1.0, 3.0])
    out = temporal_stat(stack, "VV", StatKind.KURTOSIS)
    assert out.values[0, 0] == pytest.approx(-2.0, rel=1e-6)


def test_temporal_stat_skips_per_pixel_nodata():
    geom = make_geom(1, 2)
    layers = []
    labels = []
    for t, (a, b) in enumerate([(1.0, 5.0), (2.0, -9999.0), (3.0, 7.0)]):
        labels.append(("VV", t))
        layers.append(RasterGrid(geom, np.array([[a, b]], dtype=np.float32)))
    stack = RasterStack(labels, layers)
    med = temporal_stat(stack, "VV", StatKind.MEDIAN)
    assert med.values[0, 0] == 2.0
    assert med.values[0, 1] == 6.0


def test_temporal_stat_all_nodata_pixel_is_nodata():
    geom = make_geom(1, 1)
    layers = [RasterGrid(geom, np.array([[-9999.0]], dtype=np.float32)) for _ in range(3)]
    stack = RasterStack([("VV", t) for t in range(3)], layers)
    assert not temporal_stat(stack, "VV", StatKind.MEAN).valid_mask().any()


def test_temporal_stat_skew_needs_three_observations():
    stack = series_stack("VV", [1.0, 4.0])
    assert not temporal_stat(stack, "VV", StatKind.SKEW).valid_mask().any()


def test_temporal_stat_unknown_signal():
    stack = series_stack("VV", [1.0, 2.0])
    with pytest.raises(RecipeError):
        temporal_stat(stack, "XX", StatKind.MEAN)


def test_stat_parse_aliases():
    assert StatKind.parse("min") is StatKind.P0
    assert StatKind.parse("max") is StatKind.P100
    assert StatKind.parse("p50") is StatKind.MEDIAN
    assert StatKind.parse("stdDev") is StatKind.STDDEV
    with pytest.raises(RecipeError):
        StatKind.parse("mode")


def test_nan_percentile_planes_match_numpy(rng):
    cube = rng.normal(size=(7, 9, 11))
    cube[rng.random(cube.shape) < 0.25] = np.nan
    cube[:, 0, 0] = np.nan
    qs = [0.0, 10.0, 25.0, 50.0, 75.0, 90.0, 100.0]
    planes = _nan_percentile_planes(cube, qs)
    for q, plane in zip(qs, planes):
        for r in range(cube.shape[1]):
            for c in range(cube.shape[2]):
                col = cube[:, r, c]
                col = col[~np.isnan(col)]
                want = np.nan if col.size == 0 else np.percentile(col, q)
                got = plane[r, c]
                assert (np.isnan(want) and np.isnan(got)) or want == got


# ---------------------------------------------------------------------------
# Signal series and recipes
# ---------------------------------------------------------------------------


def _multiband_stack(rng, bands=("B3", "B4", "B5", "B6", "B8", "B11", "VV", "VH"), dates=(0, 1, 2)):
    geom = make_geom(6, 6)
    labels, layers = [], []
    for band in bands:
        for t in dates:
            labels.append((band, t))
            layers.append(
                RasterGrid(geom, rng.uniform(0.05, 1.0, size=(6, 6)).astype(np.float32))
            )
    return RasterStack(labels, layers)


def test_signal_series_raw_band_passthrough(rng):
    stack = _multiband_stack(rng)
    series = signal_series(stack, "B3")
    assert [t for t, _ in series] == [0, 1, 2]


def test_signal_series_index_uses_common_dates(rng):
    geom = make_geom(2, 2)
    labels = [("B8", 0), ("B8", 1), ("B4", 1), ("B4", 2)]
    layers = [
        RasterGrid(geom, rng.uniform(0.1, 1.0, size=(2, 2)).astype(np.float32))
        for _ in labels
    ]
    series = signal_series(RasterStack(labels, layers), "NDVI")
    assert [t for t, _ in series] == [1]


def test_signal_series_missing_band_named_in_error(rng):
    stack = _multiband_stack(rng, bands=("B3", "B4"))
    with pytest.raises(RecipeError, match="B11"):
        signal_series(stack, "MNDWI")


def test_default_recipe_has_160_unique_names():
    recipe = default_recipe()
    names = recipe.names()
    assert len(names) == 160
    assert len(set(names)) == 160
    assert len(DEFAULT_SIGNALS) * len(ALL_STATS) == 156
    for expected in ("VVH_stdDev", "B3_p10", "LSWI_skew", "Near_Distance"):
        assert expected in names


def test_recipe_rejects_duplicates():
    with pytest.raises(RecipeError):
        FeatureRecipe(entries=(("B3", StatKind.MEAN), ("B3", StatKind.MEAN)), geometry=())


def test_build_features_single_entry_composes_oracles(rng):
    stack = _multiband_stack(rng, dates=(0, 1))
    recipe = FeatureRecipe(entries=(("NDVI", StatKind.MEAN),), geometry=())
    out = build_feature_rasters(stack, recipe)
    assert list(out.keys()) == ["NDVI_mean"]
    per_date = [
        normalized_difference(dict(stack.layers_for("B8"))[t], dict(stack.layers_for("B4"))[t])
        for t in (0, 1)
    ]
    expected = (per_date[0].values.astype(np.float64) + per_date[1].values) / 2.0
    assert np.allclose(out["NDVI_mean"].values, expected, atol=1e-6)


def test_build_features_empty_recipe():
    recipe = FeatureRecipe(entries=(), geometry=())
    rng = np.random.default_rng(0)
    assert build_feature_rasters(_multiband_stack(rng), recipe) == {}


def test_build_features_default_recipe_count(rng):
    stack = _multiband_stack(rng)
    fps = FootprintSet([square_footprint("a", 5, 5, 20), square_footprint("b", 35, 30, 15)])
    out = build_feature_rasters(stack, default_recipe(), footprints=fps)
    assert len(out) == 160
    assert list(out.keys()) == default_recipe().names()


def test_build_features_reports_all_failures(rng):
    stack = _multiband_stack(rng, bands=("B3", "B4"))
    recipe = FeatureRecipe(
        entries=(("B8", StatKind.MEAN), ("VVH", StatKind.MEAN)), geometry=()
    )
    with pytest.raises(RecipeError) as err:
        build_feature_rasters(stack, recipe)
    assert "B8" in str(err.value) and "VVH" in str(err.value)


# ---------------------------------------------------------------------------
# Geometry feature rasters
# ---------------------------------------------------------------------------


def test_burn_geometry_rasters_values():
    geom = make_geom(10, 10)
    fps = FootprintSet(
        [
            square_footprint("a", 10, 10, 30),
            square_footprint("b", 60, 60, 20),
        ]
    )
    out = burn_geometry_rasters(fps, geom)
    assert set(out) == set(GEOMETRY_FEATURES)
    from bheight.raster import rasterize

    mask_a = rasterize(fps[0].polygon, geom).bits
    assert np.all(out["MBG_Width"].values[mask_a] == np.float32(30.0))
    assert np.all(out["MBG_Length"].values[mask_a] == np.float32(30.0))
    assert np.all(out["MBG_Orientation"].values[mask_a] == np.float32(0.0))
    gap = np.float32(np.hypot(60 - 40, 60 - 40))
    assert np.all(out["Near_Distance"].values[mask_a] == gap)
    outside = ~(mask_a | rasterize(fps[1].polygon, geom).bits)
    assert not out["MBG_Width"].valid_mask()[outside].any()


def test_burn_geometry_rejects_unknown_name():
    geom = make_geom(4, 4)
    fps = FootprintSet([square_footprint("a", 5, 5, 10)])
    with pytest.raises(RecipeError):
        burn_geometry_rasters(fps, geom, names=("Area",))


# ---------------------------------------------------------------------------
# Feature directory IO
# ---------------------------------------------------------------------------


def test_feature_dir_round_trip(tmp_path, rng):
    grids = {
        "B3_mean": make_grid(rng.normal(size=(4, 4)).astype(np.float32)),
        "VV_p50": make_grid(rng.normal(size=(4, 4)).astype(np.float32)),
    }
    write_feature_dir(grids, tmp_path)
    back = read_feature_dir(tmp_path)
    assert list(back.keys()) == ["B3_mean", "VV_p50"]
    for name in grids:
        assert np.array_equal(back[name].values, grids[name].values)
    only = read_feature_dir(tmp_path, names=["VV_p50"])
    assert list(only.keys()) == ["VV_p50"]


def test_feature_dir_missing_manifest(tmp_path):
    with pytest.raises(AssemblyError):
        read_feature_dir(tmp_path / "nope")


def test_feature_dir_missing_requested_name(tmp_path, rng):
    write_feature_dir({"B3_mean": make_grid(rng.normal(size=(2, 2)).astype(np.float32))}, tmp_path)
    with pytest.raises(AssemblyError, match="B8_mean"):
        read_feature_dir(tmp_path, names=["B8_mean"])
