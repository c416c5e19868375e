"""End-to-end stages behind the `bh` subcommands.

Each stage is a plain function over the shared :class:`PipelineConfig`;
the CLI only parses flags and maps errors to exit codes. All randomness is
derived from the config seed through stage-labelled sub-seeds, so reruns
with the same config are bit-identical.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .errors import (
    AssemblyError,
    ConfigError,
    DataError,
    ParameterError,
)
from .explain import (
    METHOD_RF_VI,
    ImportanceReport,
    consensus_select,
    permutation_importance,
    shapley_global,
)
from .features import (
    GEOMETRY_FEATURES,
    build_feature_rasters,
    read_feature_dir,
    write_feature_dir,
)
from .geometry import (
    FootprintSet,
    footprints_from_geojson,
    point_in_polygon,
    polygon_area,
    polygon_centroid,
)
from .models import (
    GradientBoosted,
    KNNRegressor,
    LinearModel,
    RandomForest,
    RegressionTree,
    StackedRegressor,
    load_model,
    rf_variable_importance,
    save_model,
)
from .raster import (
    RasterGrid,
    percentile,
    raster_to_csv,
    rasterize,
    read_raster,
    read_stack_manifest,
    window_median,
    write_raster,
)
from .sampling import (
    LOG_HEIGHT_COLUMN,
    BinnedTable,
    FeatureTable,
    assemble_samples,
    log_height,
    prepare_training,
    split_table,
    zonal_median,
)

PREDICTION_FILE = "prediction.bhgr"
MODEL_FILE = "model.json"
SELECTION_FILE = "selection.json"
SAMPLES_FILE = "samples.csv"


# ---------------------------------------------------------------------------
# Evaluation report
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    """Fit quality on paired targets/predictions, in the modelled (log) space."""

    n: int
    r2: float | None
    mse: float
    residuals: dict
    bins: list | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "r2": self.r2,
            "mse": self.mse,
            "residuals": self.residuals,
            "bins": self.bins,
        }


def evaluate_vectors(y, yhat, breakdown: bool = False) -> EvalReport:
    """R^2, MSE, and a six-number residual summary for paired vectors.

    ``r2 = 1 - sum((y - yhat)^2) / sum((y - mean(y))^2)``; with zero target
    variance R^2 is undefined and reported as ``None``. ``breakdown`` adds
    per-unit-interval rows over the target range.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.shape != yhat.shape:
        raise DataError("target and prediction lengths differ")
    if y.size == 0:
        raise DataError("cannot evaluate zero pairs")
    resid = y - yhat
    sse = float(np.sum(resid**2))
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = None if sst == 0.0 else 1.0 - sse / sst
    mse = float(np.mean(resid**2))
    qs = percentile(resid, [25.0, 50.0, 75.0]) if resid.size else [0, 0, 0]
    residuals = {
        "min": float(resid.min()),
        "p25": float(qs[0]),
        "p50": float(qs[1]),
        "mean": float(resid.mean()),
        "p75": float(qs[2]),
        "max": float(resid.max()),
    }
    bins = None
    if breakdown:
        bins = []
        lo_edge = math.floor(float(y.min()))
        hi_edge = math.floor(float(y.max())) + 1
        for lo in range(lo_edge, hi_edge):
            sel = (y >= lo) & (y < lo + 1)
            if not sel.any():
                continue
            sub_sst = float(np.sum((y[sel] - y[sel].mean()) ** 2))
            sub_sse = float(np.sum(resid[sel] ** 2))
            bins.append(
                {
                    "lo": lo,
                    "hi": lo + 1,
                    "n": int(sel.sum()),
                    "mse": float(np.mean(resid[sel] ** 2)),
                    "r2": None if sub_sst == 0.0 else 1.0 - sub_sse / sub_sst,
                }
            )
    return EvalReport(n=int(y.size), r2=r2, mse=mse, residuals=residuals, bins=bins)


# ---------------------------------------------------------------------------
# Input loading helpers
# ---------------------------------------------------------------------------


def _need(value, what: str):
    if value is None:
        raise ConfigError(f"config is missing required input: {what}")
    return value


def _load_footprints(config: PipelineConfig) -> FootprintSet:
    return footprints_from_geojson(_need(config.inputs.footprints, "footprints"))


def _load_ndsm(config: PipelineConfig) -> RasterGrid | None:
    if config.inputs.ndsm is None:
        return None
    return read_raster(config.inputs.ndsm)


# ---------------------------------------------------------------------------
# Stage: features
# ---------------------------------------------------------------------------


def cmd_features(config: PipelineConfig) -> dict:
    """Compute feature rasters from the stack manifest into the feature dir."""
    stack = read_stack_manifest(_need(config.inputs.stack_manifest, "stack_manifest"))
    recipe = config.build_recipe()
    footprints = None
    if recipe.geometry:
        footprints = _load_footprints(config)
    features = build_feature_rasters(stack, recipe, footprints=footprints)
    out_dir = config.resolved_features_dir()
    write_feature_dir(features, out_dir)
    return {"features_dir": out_dir, "count": len(features), "names": list(features)}


# ---------------------------------------------------------------------------
# Stage: train
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: RandomForest
    selected_features: list[str]
    binned: BinnedTable
    reports: dict
    selection: object
    train_eval: EvalReport
    assembly_dropped: list = field(default_factory=list)
    paths: dict = field(default_factory=dict)


def _spectral_grids(config: PipelineConfig) -> dict[str, RasterGrid]:
    grids = read_feature_dir(config.resolved_features_dir())
    return {n: g for n, g in grids.items() if n not in GEOMETRY_FEATURES}


def assemble_training_table(config: PipelineConfig):
    footprints = _load_footprints(config)
    ndsm = _load_ndsm(config)
    grids = _spectral_grids(config)
    table, report = assemble_samples(
        grids, footprints, config.buffer_m, ndsm=ndsm
    )
    if table.n_rows == 0:
        raise AssemblyError("no usable footprint produced a training row")
    return table, report


def cmd_train(config: PipelineConfig, write_outputs: bool = True) -> TrainResult:
    """Assemble, bin, select features by consensus, and fit the final forest."""
    table, assembly = assemble_training_table(config)
    binned = prepare_training(
        table, lo_pct=config.clip_lo, hi_pct=config.clip_hi, bin_step=config.bin_step
    )
    names = binned.table.feature_columns()
    X = binned.table.X
    y = binned.table.y
    params = config.model
    full = RandomForest(
        n_trees=params.n_trees,
        mtry=params.mtry,
        min_leaf=params.min_leaf,
        max_depth=params.max_depth,
        seed=config.stage_seed("train"),
    ).fit(X, y)
    sel_cfg = config.selection
    vi = rf_variable_importance(
        full, X, y, repeats=1, seed=config.stage_seed("rf_vi")
    )
    reports = {
        METHOD_RF_VI: ImportanceReport(
            METHOD_RF_VI,
            dict(zip(names, vi.tolist())),
            metadata={"repeats": 1, "seed": config.stage_seed("rf_vi")},
        ),
        "permutation": permutation_importance(
            full,
            X,
            y,
            names=names,
            repeats=sel_cfg.permutation_repeats,
            seed=config.stage_seed("permutation"),
        ),
    }
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([config.stage_seed("shapley")]))
    )
    n = X.shape[0]
    row_idx = np.sort(rng.choice(n, size=min(sel_cfg.shapley_rows, n), replace=False))
    bg_idx = np.sort(
        rng.choice(n, size=min(sel_cfg.shapley_background, n), replace=False)
    )
    reports["shapley"] = shapley_global(
        full,
        X[row_idx],
        X[bg_idx],
        names=names,
        mode="sampled",
        samples=sel_cfg.shapley_samples,
        seed=config.stage_seed("shapley"),
    )
    ranking = consensus_select(
        list(reports.values()),
        k=sel_cfg.k,
        weights=sel_cfg.weights,
        overrides=sel_cfg.overrides,
    )
    # Keep assembly column order so k = n_features reproduces the full fit.
    chosen = set(ranking.selected)
    selected = [n for n in names if n in chosen]
    sub = binned.table.select(selected)
    final = RandomForest(
        n_trees=params.n_trees,
        mtry=params.mtry,
        min_leaf=params.min_leaf,
        max_depth=params.max_depth,
        seed=config.stage_seed("train"),
    ).fit(sub.X, sub.y)
    train_eval = evaluate_vectors(sub.y, final.predict(sub.X))
    paths = {}
    if write_outputs:
        out = config.output_dir
        os.makedirs(out, exist_ok=True)
        paths["model"] = os.path.join(out, MODEL_FILE)
        save_model(final, paths["model"], features=selected, target=LOG_HEIGHT_COLUMN)
        paths["selection"] = os.path.join(out, SELECTION_FILE)
        with open(paths["selection"], "w", encoding="utf-8") as fh:
            json.dump(ranking.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        for method, report in reports.items():
            p = os.path.join(out, f"importance_{method}.csv")
            report.write_csv(p)
            paths[f"importance_{method}"] = p
        paths["samples"] = os.path.join(out, SAMPLES_FILE)
        binned.table.write_csv(paths["samples"])
        paths["train_eval"] = os.path.join(out, "train_eval.json")
        with open(paths["train_eval"], "w", encoding="utf-8") as fh:
            json.dump(train_eval.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths["assembly"] = os.path.join(out, "assembly.json")
        with open(paths["assembly"], "w", encoding="utf-8") as fh:
            json.dump(
                {"kept": assembly.kept, "dropped": assembly.dropped},
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
    return TrainResult(
        model=final,
        selected_features=selected,
        binned=binned,
        reports=reports,
        selection=ranking,
        train_eval=train_eval,
        assembly_dropped=assembly.dropped,
        paths=paths,
    )


# ---------------------------------------------------------------------------
# Stage: predict
# ---------------------------------------------------------------------------


def cmd_predict(
    config: PipelineConfig,
    model_path: str | None = None,
    out_path: str | None = None,
    unmasked: bool = False,
    dump_csv: str | None = None,
) -> str:
    """Per-pixel heights in meters from the saved model and feature rasters.

    Prediction runs in log space, is smoothed with the configured moving
    window (``window_m = 0`` disables smoothing), exponentiated, and finally
    masked to footprint pixels unless ``unmasked`` is set.
    """
    model_path = model_path or os.path.join(config.output_dir, MODEL_FILE)
    model, feature_names, _target = load_model(model_path)
    if not feature_names:
        raise AssemblyError("model file does not name its features")
    grids = read_feature_dir(config.resolved_features_dir(), names=feature_names)
    geom = next(iter(grids.values())).geometry
    stackmat = np.empty((geom.n_pixels, len(feature_names)), dtype=np.float64)
    valid = np.ones(geom.n_pixels, dtype=bool)
    for j, name in enumerate(feature_names):
        grid = grids[name]
        stackmat[:, j] = grid.values.reshape(-1)
        valid &= grid.valid_mask().reshape(-1)
    nodata = next(iter(grids.values())).nodata
    log_pred = np.full(geom.n_pixels, nodata, dtype=np.float32)
    if valid.any():
        log_pred[valid] = model.predict(stackmat[valid]).astype(np.float32)
    pred_grid = RasterGrid(geom, log_pred.reshape(geom.shape), nodata)
    if config.window_m > 0:
        pred_grid = window_median(pred_grid, config.window_m)
    meters = np.where(
        pred_grid.valid_mask(),
        np.exp(pred_grid.values.astype(np.float64)).astype(np.float32),
        np.float32(nodata),
    )
    out_grid = RasterGrid(geom, meters, nodata)
    if not unmasked:
        footprints = _load_footprints(config)
        union = np.zeros(geom.shape, dtype=bool)
        for fp in footprints:
            union |= rasterize(fp.polygon, geom).bits
        masked = np.where(union, out_grid.values, np.float32(nodata))
        out_grid = RasterGrid(geom, masked, nodata)
    out_path = out_path or os.path.join(config.output_dir, PREDICTION_FILE)
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    write_raster(out_grid, out_path)
    if dump_csv:
        raster_to_csv(out_grid, dump_csv)
    return out_path


# ---------------------------------------------------------------------------
# Stage: evaluate
# ---------------------------------------------------------------------------


def building_height_pairs(
    pred: RasterGrid, footprints: FootprintSet, ndsm: RasterGrid | None
) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Per-building (reference, predicted) log heights from rasters.

    The predicted height of a building is the median of the prediction raster
    over its footprint pixels; the reference comes from the nDSM the same way
    (or the ``ref_height_m`` attribute when no surface is given). Buildings
    missing either side are skipped.
    """
    ids = []
    ref = []
    hat = []
    for fp in footprints:
        mask = rasterize(fp.polygon, pred.geometry)
        if not mask.any():
            continue
        p = zonal_median(pred, mask)
        if p is None:
            continue
        if ndsm is not None:
            r = zonal_median(ndsm, mask)
        else:
            r = fp.ref_height_m
        if r is None:
            continue
        ids.append(fp.id)
        ref.append(float(r))
        hat.append(float(p))
    return ids, log_height(np.asarray(ref)), log_height(np.asarray(hat))


def cmd_evaluate(
    config: PipelineConfig,
    pred_path: str | None = None,
    out_path: str | None = None,
    breakdown: bool = False,
) -> EvalReport:
    """Object-level accuracy of a prediction raster against reference heights."""
    pred_path = pred_path or os.path.join(config.output_dir, PREDICTION_FILE)
    pred = read_raster(pred_path)
    footprints = _load_footprints(config)
    ndsm = _load_ndsm(config)
    ids, y, yhat = building_height_pairs(pred, footprints, ndsm)
    if len(ids) == 0:
        raise DataError("no building had both a prediction and a reference height")
    report = evaluate_vectors(y, yhat, breakdown=breakdown)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


# ---------------------------------------------------------------------------
# Stage: compare
# ---------------------------------------------------------------------------

COMPARE_MODELS = ("rpart", "ols", "rf", "knn", "boost", "stack")
_MODEL_ALIASES = {"lm": "ols", "glm": "ols", "tree": "rpart", "forest": "rf"}


def _make_model(name: str, seed: int, config: PipelineConfig):
    params = config.model
    if name == "rpart":
        return RegressionTree(min_leaf=params.min_leaf, seed=seed)
    if name == "ols":
        return LinearModel()
    if name == "rf":
        return RandomForest(
            n_trees=params.n_trees,
            mtry=params.mtry,
            min_leaf=params.min_leaf,
            max_depth=params.max_depth,
            seed=seed,
        )
    if name == "knn":
        return KNNRegressor(k=5)
    if name == "boost":
        return GradientBoosted(n_stages=150, shrinkage=0.1, max_depth=3, seed=seed)
    if name == "stack":
        return StackedRegressor(
            bases=[
                ("rf", RandomForest(n_trees=60, min_leaf=params.min_leaf, seed=seed)),
                ("ols", LinearModel()),
            ],
            folds=5,
            seed=seed,
        )
    raise ConfigError(f"unknown model {name!r}; choose from {sorted(COMPARE_MODELS)}")


@dataclass
class ComparisonTable:
    """Test R^2 distributions of several model families over shared splits."""

    n_splits: int
    scores: dict
    summary: dict

    def to_dict(self) -> dict:
        return {"n_splits": self.n_splits, "scores": self.scores, "summary": self.summary}

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "min", "p25", "median", "mean", "p75", "max"])
            for name, s in self.summary.items():
                writer.writerow(
                    [name]
                    + [
                        repr(float(s[k]))
                        for k in ("min", "p25", "median", "mean", "p75", "max")
                    ]
                )


def six_number_summary(values) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    qs = percentile(arr, [25.0, 50.0, 75.0])
    return {
        "min": float(arr.min()),
        "p25": float(qs[0]),
        "median": float(qs[1]),
        "mean": float(arr.mean()),
        "p75": float(qs[2]),
        "max": float(arr.max()),
    }


def cmd_compare(
    config: PipelineConfig,
    table: FeatureTable,
    models=("rpart", "ols", "rf", "knn"),
    n_splits: int = 30,
) -> ComparisonTable:
    """Fit each model family on the same shuffled splits; summarize test R^2.

    Every model sees the identical train/test rows in every split, so the
    distributions are paired.
    """
    if n_splits < 2:
        raise ParameterError(f"need at least 2 splits, got {n_splits}")
    names = []
    for m in models:
        canon = _MODEL_ALIASES.get(m, m)
        if canon not in COMPARE_MODELS:
            raise ConfigError(
                f"unknown model {m!r}; choose from {sorted(COMPARE_MODELS + tuple(_MODEL_ALIASES))}"
            )
        names.append(canon)
    scores: dict[str, list[float]] = {m: [] for m in names}
    for s in range(n_splits):
        split_seed = config.stage_seed(f"compare_split_{s}")
        train, test = split_table(table, config.test_fraction, seed=split_seed)
        for m in names:
            model = _make_model(m, seed=config.stage_seed(f"compare_{m}_{s}"), config=config)
            model.fit(train.X, train.y)
            rep = evaluate_vectors(test.y, model.predict(test.X))
            scores[m].append(rep.r2 if rep.r2 is not None else float("nan"))
    summary = {m: six_number_summary(scores[m]) for m in names}
    return ComparisonTable(n_splits=n_splits, scores=scores, summary=summary)


# ---------------------------------------------------------------------------
# Stage: sweep
# ---------------------------------------------------------------------------

SWEEP_CANDIDATES = (10.0, 30.0, 50.0, 80.0, 100.0)


def cmd_sweep(config: PipelineConfig, candidates=SWEEP_CANDIDATES) -> list[dict]:
    """Re-run training with buffer and window both set to each candidate.

    Rows are ranked by training R^2. A candidate narrower than one pixel
    reports a parameter error in its row; the others still run.
    """
    import copy

    candidates = list(candidates)
    if not candidates:
        raise ParameterError("sweep needs at least one candidate distance")
    grids = _spectral_grids(config)
    pixel = next(iter(grids.values())).geometry.pixel_size if grids else None
    rows = []
    for d in candidates:
        cfg = copy.deepcopy(config)
        cfg.buffer_m = float(d)
        cfg.window_m = float(d)
        row = {"distance_m": float(d), "r2": None, "mse": None, "n_bins": None, "error": None}
        try:
            if d < 0:
                raise ParameterError(f"distance must be >= 0, got {d}")
            if pixel is not None and 0 < d < pixel:
                raise ParameterError(
                    f"window of {d} m is narrower than one {pixel} m pixel"
                )
            result = cmd_train(cfg, write_outputs=False)
            row["r2"] = result.train_eval.r2
            row["mse"] = result.train_eval.mse
            row["n_bins"] = result.binned.table.n_rows
        except (ParameterError, DataError, AssemblyError) as exc:
            row["error"] = str(exc)
        rows.append(row)
    rows.sort(key=lambda r: (-(r["r2"] if r["r2"] is not None else -math.inf)))
    return rows


# ---------------------------------------------------------------------------
# Stage: aggregate
# ---------------------------------------------------------------------------


def cmd_aggregate(
    config: PipelineConfig,
    pred_path: str | None = None,
) -> list[dict]:
    """Region summaries: building count, heights, footprint area and ratio.

    A building belongs to the region containing its footprint centroid (same
    even-odd, half-open rule as rasterization). Regions with no building get
    a zero-count row with null height statistics.
    """
    regions = footprints_from_geojson(_need(config.inputs.regions, "regions"))
    footprints = _load_footprints(config)
    pred_path = pred_path or os.path.join(config.output_dir, PREDICTION_FILE)
    pred = read_raster(pred_path)
    heights: dict[str, float] = {}
    for fp in footprints:
        mask = rasterize(fp.polygon, pred.geometry)
        if not mask.any():
            continue
        med = zonal_median(pred, mask)
        if med is not None:
            heights[fp.id] = med
    rows = []
    for region in regions:
        member_ids = [
            fp.id
            for fp in footprints
            if point_in_polygon(polygon_centroid(fp.polygon), region.polygon)
        ]
        hs = [heights[i] for i in member_ids if i in heights]
        area = sum(
            polygon_area(fp.polygon) for fp in footprints if fp.id in member_ids
        )
        land = polygon_area(region.polygon)
        rows.append(
            {
                "region_id": region.id,
                "n_buildings": len(member_ids),
                "mean_height_m": float(np.mean(hs)) if hs else None,
                "max_height_m": float(np.max(hs)) if hs else None,
                "footprint_area_m2": area,
                "land_area_m2": land,
                "footprint_ratio": area / land if land > 0 else None,
            }
        )
    return rows


def write_aggregate_csv(rows: list[dict], path) -> None:
    import csv

    cols = [
        "region_id",
        "n_buildings",
        "mean_height_m",
        "max_height_m",
        "footprint_area_m2",
        "land_area_m2",
        "footprint_ratio",
    ]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow(
                ["" if row[c] is None else row[c] for c in cols]
            )
