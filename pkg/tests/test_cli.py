"""Command line flows: full chain on a synthetic city, plus exit codes."""

import json
import os

import numpy as np
import pytest

from bheight.cli import build_parser, main
from bheight.raster import read_raster
from bheight.sampling import LOG_HEIGHT_COLUMN, FeatureTable


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    city = root / "city"
    rc = main(
        [
            "synth",
            "--out",
            str(city),
            "--seed",
            "11",
            "--size",
            "96",
            "--buildings",
            "18",
            "--dates",
            "4",
        ]
    )
    assert rc == 0
    out = root / "out"
    config = {
        "inputs": {
            "stack_manifest": str(city / "stack_manifest.json"),
            "footprints": str(city / "footprints.geojson"),
            "ndsm": str(city / "ndsm.bhgr"),
            "regions": str(city / "regions.geojson"),
        },
        "output_dir": str(out),
        "model": {"n_trees": 50},
        "selection": {"k": 6},
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(config) + "\n")
    return {"root": root, "city": city, "out": out, "config": str(cfg_path)}


@pytest.fixture(scope="module")
def trained(workspace):
    assert main(["features", "--config", workspace["config"]]) == 0
    assert main(["train", "--config", workspace["config"]]) == 0
    return workspace


@pytest.fixture(scope="module")
def predicted(trained):
    assert main(["predict", "--config", trained["config"]]) == 0
    return trained


def test_synth_writes_city_files(workspace):
    for name in (
        "stack_manifest.json",
        "footprints.geojson",
        "regions.geojson",
        "ndsm.bhgr",
        "truth.csv",
    ):
        assert (workspace["city"] / name).exists(), name


def test_features_command_output(trained):
    features_dir = trained["out"] / "features"
    manifest = json.loads((features_dir / "manifest.json").read_text())
    assert len(manifest["features"]) == 160


def test_train_command_artifacts(trained):
    for name in ("model.json", "selection.json", "samples.csv", "train_eval.json"):
        assert (trained["out"] / name).exists(), name
    selection = json.loads((trained["out"] / "selection.json").read_text())
    assert len(selection["selected"]) == 6


def test_train_command_stdout(trained, tmp_path, capsys):
    rc = main(
        [
            "train",
            "--config",
            trained["config"],
            "--output-dir",
            str(tmp_path),
            "--features-dir",
            str(trained["out"] / "features"),
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "selected:" in out
    assert "training r2:" in out


def test_predict_command_output(predicted):
    pred = read_raster(predicted["out"] / "prediction.bhgr")
    valid = pred.valid_mask()
    assert valid.any()
    assert (pred.values[valid] > 0).all()


def test_evaluate_command(predicted, tmp_path, capsys):
    report_path = str(tmp_path / "eval.json")
    rc = main(["evaluate", "--config", predicted["config"], "--out", report_path])
    assert rc == 0
    out = capsys.readouterr().out
    assert "buildings:" in out and "r2:" in out
    payload = json.loads(open(report_path).read())
    assert payload["n"] >= 8


def test_aggregate_command(predicted, tmp_path, capsys):
    table = str(tmp_path / "agg.csv")
    rc = main(["aggregate", "--config", predicted["config"], "--out", table])
    assert rc == 0
    lines = open(table).read().strip().splitlines()
    assert lines[0].startswith("region_id,")
    assert len(lines) == 5
    assert "q0:" in capsys.readouterr().out


def _write_table(path, n=60, seed=3):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, size=(n, 3))
    y = X[:, 0] ** 2 + 0.2 * rng.normal(size=n)
    FeatureTable(
        ["x0", "x1", "x2", LOG_HEIGHT_COLUMN],
        [f"r{i}" for i in range(n)],
        np.column_stack([X, y]),
        target=LOG_HEIGHT_COLUMN,
    ).write_csv(path)


def test_compare_command(tmp_path, capsys):
    table = str(tmp_path / "table.csv")
    _write_table(table)
    out_csv = str(tmp_path / "cmp.csv")
    rc = main(
        [
            "compare",
            "--table",
            table,
            "--models",
            "lm,forest",
            "--splits",
            "3",
            "--n-trees",
            "20",
            "--out",
            out_csv,
        ]
    )
    assert rc == 0
    printed = capsys.readouterr().out
    assert "splits: 3" in printed
    lines = open(out_csv).read().strip().splitlines()
    assert lines[0] == "model,min,p25,median,mean,p75,max"
    assert {ln.split(",")[0] for ln in lines[1:]} == {"ols", "rf"}


def test_sweep_command(trained, tmp_path, capsys):
    out_json = str(tmp_path / "sweep.json")
    rc = main(
        [
            "sweep",
            "--config",
            trained["config"],
            "--output-dir",
            str(tmp_path),
            "--features-dir",
            str(trained["out"] / "features"),
            "--candidates",
            "50",
            "--out",
            out_json,
        ]
    )
    assert rc == 0
    rows = json.loads(open(out_json).read())
    assert len(rows) == 1
    assert rows[0]["distance_m"] == 50.0
    assert rows[0]["error"] is None
    assert "r2=" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# Exit codes
# ---------------------------------------------------------------------------


def test_exit_code_for_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"bufer_m": 10}\n')
    assert main(["train", "--config", str(bad)]) == 2
    assert "error:" in capsys.readouterr().err


def test_exit_code_for_missing_config(capsys):
    assert main(["train", "--config", "/nonexistent/cfg.json"]) == 2
    capsys.readouterr()


def test_exit_code_for_invalid_synth_size(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--size", "32"]) == 2
    capsys.readouterr()


def test_exit_code_for_missing_inputs(tmp_path, capsys):
    empty = tmp_path / "empty.json"
    empty.write_text("{}\n")
    assert main(["features", "--config", str(empty)]) == 2
    capsys.readouterr()


def test_exit_code_for_malformed_table(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("name,a\nr,1\n")
    assert main(["compare", "--table", str(bad)]) == 3
    capsys.readouterr()


def test_exit_code_for_unreadable_raster(workspace, tmp_path, capsys):
    rc = main(
        [
            "evaluate",
            "--config",
            workspace["config"],
            "--prediction",
            str(tmp_path),
        ]
    )
    assert rc == 4
    assert "internal error" in capsys.readouterr().err


def test_parser_covers_all_stages():
    parser = build_parser()
    assert parser.prog == "bh"
    args = parser.parse_args(["synth", "--out", "x"])
    assert args.command == "synth"
    for command in ("features", "train", "predict", "evaluate", "sweep", "aggregate"):
        args = parser.parse_args([command, "--config", "c.json"])
        assert args.command == command
