"""Shared helpers for the test suite.

Grids default to a 10 m pixel with the origin placed so that all pixel
centers have positive planar coordinates.
"""

import numpy as np
import pytest

from bheight.geometry import Footprint, Polygon
from bheight.raster import GridGeometry, RasterGrid

# Verdict lines appended by tests/test_acceptance.py. Echoed in the terminal
# summary because pytest swallows stdout of passing tests.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_geom(rows, cols, pixel_size=10.0, origin_x=0.0, origin_y=None):
    if origin_y is None:
        origin_y = rows * pixel_size
    return GridGeometry(
        rows=rows, cols=cols, origin_x=origin_x, origin_y=origin_y, pixel_size=pixel_size
    )


def make_grid(values, pixel_size=10.0, nodata=-9999.0):
    values = np.asarray(values, dtype=np.float32)
    geom = make_geom(values.shape[0], values.shape[1], pixel_size=pixel_size)
    return RasterGrid(geom, values, nodata)


def square(x0, y0, side):
    """Axis-aligned square polygon with lower-left corner (x0, y0)."""
    return Polygon(
        np.array(
            [[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]],
            dtype=np.float64,
        )
    )


def square_footprint(fid, x0, y0, side, ref_height_m=None):
    return Footprint(id=fid, polygon=square(x0, y0, side), ref_height_m=ref_height_m)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
