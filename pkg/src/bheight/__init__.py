"""Building-height regression from multi-temporal rasters and building footprints.

The package is organised in layers: raster primitives (`raster`), footprint
polygon morphology (`geometry`), index and temporal-statistic features
(`features`), sample assembly and binning (`sampling`), tree-ensemble
regressors (`models`), model explanation and feature selection (`explain`),
a synthetic-city generator (`synth`), and the pipeline orchestration behind
the `bh` command line tool (`config`, `pipeline`, `cli`).
"""

__version__ = "0.1.0"

from .errors import (
    BHError,
    ConfigError,
    DataError,
    FormatError,
    GeometryError,
    ParameterError,
    ValidationError,
)

__all__ = [
    "BHError",
    "ConfigError",
    "DataError",
    "FormatError",
    "GeometryError",
    "ParameterError",
    "ValidationError",
    "__version__",
]
