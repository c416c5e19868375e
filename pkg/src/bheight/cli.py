"""Command line entry point ``bh``.

Subcommands mirror the pipeline stages: ``synth`` makes a test city,
``features`` computes rasters, ``train`` fits and saves a model,
``predict`` writes a height raster, ``evaluate`` scores it, and
``compare``/``sweep``/``aggregate`` run the supporting studies. Exit codes:
0 ok, 2 configuration problem, 3 data problem, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import PipelineConfig
from .errors import EXIT_INTERNAL, BHError
from .pipeline import (
    COMPARE_MODELS,
    SWEEP_CANDIDATES,
    cmd_aggregate,
    cmd_compare,
    cmd_evaluate,
    cmd_features,
    cmd_predict,
    cmd_sweep,
    cmd_train,
    write_aggregate_csv,
)
from .sampling import LOG_HEIGHT_COLUMN, FeatureTable


def _add_config_args(parser: argparse.ArgumentParser, require: bool = True) -> None:
    parser.add_argument("--config", required=require, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--output-dir", dest="output_dir", help="override output directory")
    parser.add_argument(
        "--features-dir", dest="features_dir", help="override feature raster directory"
    )
    parser.add_argument("--buffer-m", dest="buffer_m", type=float, help="zone buffer, meters")
    parser.add_argument(
        "--window-m", dest="window_m", type=float, help="median window, meters (0 disables)"
    )
    parser.add_argument("--n-trees", dest="n_trees", type=int, help="override forest size")
    parser.add_argument("--k", type=int, help="override number of selected features")


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        config = PipelineConfig.from_file(args.config)
    else:
        config = PipelineConfig()
    return config.apply_overrides(
        seed=getattr(args, "seed", None),
        output_dir=getattr(args, "output_dir", None),
        features_dir=getattr(args, "features_dir", None),
        buffer_m=getattr(args, "buffer_m", None),
        window_m=getattr(args, "window_m", None),
        n_trees=getattr(args, "n_trees", None),
        k=getattr(args, "k", None),
    )


def _run_synth(args) -> int:
    from .synth import generate_city, write_city

    city = generate_city(
        seed=args.seed,
        size=args.size,
        n_buildings=args.buildings,
        n_dates=args.dates,
    )
    paths = write_city(city, args.out)
    for key in sorted(paths):
        print(f"{key}: {paths[key]}")
    return 0


def _run_features(args) -> int:
    result = cmd_features(_load_config(args))
    print(f"wrote {result['count']} feature rasters to {result['features_dir']}")
    return 0


def _run_train(args) -> int:
    result = cmd_train(_load_config(args))
    ev = result.train_eval
    r2 = "undefined" if ev.r2 is None else f"{ev.r2:.4f}"
    print(f"rows: {result.binned.table.n_rows}")
    print(f"selected: {', '.join(result.selected_features)}")
    print(f"training r2: {r2}  mse: {ev.mse:.6f}")
    for key in ("model", "selection", "samples"):
        if key in result.paths:
            print(f"{key}: {result.paths[key]}")
    return 0


def _run_predict(args) -> int:
    out = cmd_predict(
        _load_config(args),
        model_path=args.model,
        out_path=args.out,
        unmasked=args.unmasked,
        dump_csv=args.dump_csv,
    )
    print(f"prediction: {out}")
    return 0


def _run_evaluate(args) -> int:
    report = cmd_evaluate(
        _load_config(args),
        pred_path=args.prediction,
        out_path=args.out,
        breakdown=args.breakdown,
    )
    r2 = "undefined" if report.r2 is None else f"{report.r2:.4f}"
    print(f"buildings: {report.n}  r2: {r2}  mse: {report.mse:.6f}")
    if args.breakdown and report.bins:
        for row in report.bins:
            sub = "undefined" if row["r2"] is None else f"{row['r2']:.4f}"
            print(
                f"  [{row['lo']}, {row['hi']}): n={row['n']} mse={row['mse']:.6f} r2={sub}"
            )
    return 0


def _run_compare(args) -> int:
    config = _load_config(args)
    table = FeatureTable.read_csv(args.table, target=args.target)
    result = cmd_compare(
        config,
        table,
        models=[m.strip() for m in args.models.split(",") if m.strip()],
        n_splits=args.splits,
    )
    print(f"splits: {result.n_splits}")
    for name, s in result.summary.items():
        print(
            f"{name}: median={s['median']:.4f} mean={s['mean']:.4f} "
            f"min={s['min']:.4f} max={s['max']:.4f}"
        )
    if args.out:
        result.write_csv(args.out)
        print(f"table: {args.out}")
    return 0


def _run_sweep(args) -> int:
    config = _load_config(args)
    candidates = SWEEP_CANDIDATES
    if args.candidates:
        candidates = [float(c) for c in args.candidates.split(",") if c.strip()]
    rows = cmd_sweep(config, candidates)
    for row in rows:
        if row["error"] is not None:
            print(f"{row['distance_m']:g} m: error: {row['error']}")
        else:
            r2 = "undefined" if row["r2"] is None else f"{row['r2']:.4f}"
            print(f"{row['distance_m']:g} m: r2={r2} bins={row['n_bins']}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"table: {args.out}")
    return 0


def _run_aggregate(args) -> int:
    rows = cmd_aggregate(_load_config(args), pred_path=args.prediction)
    for row in rows:
        mean = "-" if row["mean_height_m"] is None else f"{row['mean_height_m']:.2f}"
        print(
            f"{row['region_id']}: buildings={row['n_buildings']} "
            f"mean_height={mean} ratio={row['footprint_ratio']:.4f}"
        )
    if args.out:
        write_aggregate_csv(rows, args.out)
        print(f"table: {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bh", description="building height estimation from multitemporal rasters"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic city for testing")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=256, help="grid side in pixels")
    p.add_argument("--buildings", type=int, default=150)
    p.add_argument("--dates", type=int, default=6)
    p.set_defaults(fn=_run_synth)

    p = sub.add_parser("features", help="compute feature rasters from the stack")
    _add_config_args(p)
    p.set_defaults(fn=_run_features)

    p = sub.add_parser("train", help="assemble samples, select features, fit forest")
    _add_config_args(p)
    p.set_defaults(fn=_run_train)

    p = sub.add_parser("predict", help="write a height raster from a saved model")
    _add_config_args(p)
    p.add_argument("--model", help="model JSON path (default: output dir)")
    p.add_argument("--out", help="output raster path (default: output dir)")
    p.add_argument("--unmasked", action="store_true", help="keep non-footprint pixels")
    p.add_argument("--dump-csv", dest="dump_csv", help="also write pixel rows as CSV")
    p.set_defaults(fn=_run_predict)

    p = sub.add_parser("evaluate", help="score a prediction against references")
    _add_config_args(p)
    p.add_argument("--prediction", help="prediction raster (default: output dir)")
    p.add_argument("--out", help="write the report as JSON")
    p.add_argument("--breakdown", action="store_true", help="per-interval rows")
    p.set_defaults(fn=_run_evaluate)

    p = sub.add_parser("compare", help="R^2 of model families over shared splits")
    _add_config_args(p, require=False)
    p.add_argument("--table", required=True, help="training table CSV")
    p.add_argument("--target", default=LOG_HEIGHT_COLUMN)
    p.add_argument(
        "--models",
        default="rpart,ols,rf,knn",
        help=f"comma list from {','.join(COMPARE_MODELS)}",
    )
    p.add_argument("--splits", type=int, default=30)
    p.add_argument("--out", help="write the summary as CSV")
    p.set_defaults(fn=_run_compare)

    p = sub.add_parser("sweep", help="train at several buffer/window distances")
    _add_config_args(p)
    p.add_argument("--candidates", help="comma list of distances in meters")
    p.add_argument("--out", help="write rows as JSON")
    p.set_defaults(fn=_run_sweep)

    p = sub.add_parser("aggregate", help="summarize predicted heights by region")
    _add_config_args(p)
    p.add_argument("--prediction", help="prediction raster (default: output dir)")
    p.add_argument("--out", help="write rows as CSV")
    p.set_defaults(fn=_run_aggregate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except BHError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
