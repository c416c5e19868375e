"""Pipeline configuration: JSON file form, defaults, CLI overrides.

A config round-trips losslessly through ``to_dict``/``from_dict``. Unknown
keys are rejected so typos fail fast, with exit code 2 at the CLI.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .features import (
    ALL_STATS,
    DEFAULT_GAMMA,
    DEFAULT_SIGNALS,
    GEOMETRY_FEATURES,
    FeatureRecipe,
    StatKind,
    default_recipe,
)


def derive_seed(master: int, label: str) -> int:
    """Stable per-stage sub-seed: stages can be re-run or reordered freely."""
    return int(
        np.random.SeedSequence([int(master), zlib.crc32(label.encode("utf-8"))])
        .generate_state(1)[0]
    )


@dataclass
class ModelConfig:
    n_trees: int = 500
    mtry: int | None = None
    min_leaf: int = 5
    max_depth: int | None = None


@dataclass
class SelectionConfig:
    k: int = 13
    weights: dict = field(
        default_factory=lambda: {"rf_vi": 1.0, "permutation": 1.0, "shapley": 1.0}
    )
    overrides: list = field(default_factory=list)
    permutation_repeats: int = 3
    shapley_rows: int = 16
    shapley_background: int = 48
    shapley_samples: int = 2


@dataclass
class InputConfig:
    stack_manifest: str | None = None
    footprints: str | None = None
    ndsm: str | None = None
    regions: str | None = None


@dataclass
class PipelineConfig:
    """Everything the `bh` subcommands need, with field-tested defaults."""

    inputs: InputConfig = field(default_factory=InputConfig)
    output_dir: str = "."
    features_dir: str | None = None
    recipe: dict | None = None
    buffer_m: float = 50.0
    window_m: float = 50.0
    clip_lo: float = 1.0
    clip_hi: float = 99.0
    bin_step: float = 0.01
    test_fraction: float = 0.3
    model: ModelConfig = field(default_factory=ModelConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")

        def build(dc_cls, payload, where):
            if payload is None:
                return dc_cls()
            if not isinstance(payload, dict):
                raise ConfigError(f"{where} must be an object")
            fields = {f for f in dc_cls.__dataclass_fields__}
            unknown = set(payload) - fields
            if unknown:
                raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
            return dc_cls(**payload)

        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        payload = dict(obj)
        payload["inputs"] = build(InputConfig, payload.get("inputs"), "inputs")
        payload["model"] = build(ModelConfig, payload.get("model"), "model")
        payload["selection"] = build(SelectionConfig, payload.get("selection"), "selection")
        cfg = cls(**payload)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def validate(self) -> None:
        if self.buffer_m < 0:
            raise ConfigError(f"buffer_m must be >= 0, got {self.buffer_m}")
        if self.window_m < 0:
            raise ConfigError(f"window_m must be >= 0, got {self.window_m}")
        if not (0.0 <= self.clip_lo < self.clip_hi <= 100.0):
            raise ConfigError(
                f"clip percentiles must satisfy 0 <= lo < hi <= 100, "
                f"got ({self.clip_lo}, {self.clip_hi})"
            )
        if self.bin_step <= 0:
            raise ConfigError(f"bin_step must be > 0, got {self.bin_step}")
        if not (0.0 < self.test_fraction < 1.0):
            raise ConfigError(
                f"test_fraction must be in (0, 1), got {self.test_fraction}"
            )
        if self.model.n_trees < 1:
            raise ConfigError(f"model.n_trees must be >= 1, got {self.model.n_trees}")
        if self.selection.k < 1:
            raise ConfigError(f"selection.k must be >= 1, got {self.selection.k}")
        if self.recipe is not None:
            self.build_recipe()

    def apply_overrides(self, **overrides) -> "PipelineConfig":
        """CLI flags override file values; None means 'not given'."""
        for key, value in overrides.items():
            if value is None:
                continue
            if key in ("n_trees",):
                self.model.n_trees = value
            elif key in ("k",):
                self.selection.k = value
            elif key in self.__dataclass_fields__:
                setattr(self, key, value)
            elif key in InputConfig.__dataclass_fields__:
                setattr(self.inputs, key, value)
            else:
                raise ConfigError(f"unknown override {key!r}")
        self.validate()
        return self

    def resolved_features_dir(self) -> str:
        import os

        if self.features_dir is not None:
            return self.features_dir
        return os.path.join(self.output_dir, "features")

    def build_recipe(self) -> FeatureRecipe:
        """Default full recipe, or the product/pair form given in the config."""
        if self.recipe is None:
            return default_recipe()
        obj = self.recipe
        if not isinstance(obj, dict):
            raise ConfigError("recipe must be an object")
        unknown = set(obj) - {"signals", "stats", "pairs", "geometry", "gamma"}
        if unknown:
            raise ConfigError(f"unknown recipe keys: {sorted(unknown)}")
        gamma = obj.get("gamma", DEFAULT_GAMMA)
        geometry = tuple(obj.get("geometry", GEOMETRY_FEATURES))
        if "pairs" in obj:
            if "signals" in obj or "stats" in obj:
                raise ConfigError("recipe: give either pairs or signals/stats, not both")
            entries = tuple(
                (str(sig), StatKind.parse(str(st))) for sig, st in obj["pairs"]
            )
        else:
            signals = tuple(obj.get("signals", DEFAULT_SIGNALS))
            stats = tuple(StatKind.parse(str(s)) for s in obj.get("stats", ())) or ALL_STATS
            entries = tuple((sig, st) for sig in signals for st in stats)
        return FeatureRecipe(entries=entries, geometry=geometry, gamma=gamma)

    def stage_seed(self, label: str) -> int:
        return derive_seed(self.seed, label)
