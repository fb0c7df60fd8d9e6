"""Shared fixtures: JIT warmup, small reusable scenes, acceptance summary."""

import numpy as np
import pytest

from bcpflood.bcp import BcpConfig
from bcpflood.engine import run_stack
from bcpflood.geotiff import GeoReference
from bcpflood.raster import RasterStack
from bcpflood.synth import SceneSpec, synth_scene

# One "[criterion N] PASS/FAIL ..." line per acceptance test, echoed in the
# terminal summary so the verdicts survive output capture.
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # Compile (or load the cached) sampler kernel once so per-test timings
    # measure the model, not the JIT.
    data = np.zeros((3, 1, 2, 2), dtype=np.float32)
    data[1:] = 1.0
    stack = RasterStack(
        data=data,
        nodata_mask=np.zeros((3, 2, 2), dtype=bool),
        dates=("2022-01-01", "2022-01-13", "2022-01-25"),
        channels=("VV",),
        georef=GeoReference(),
        resolution_m=20.0,
    )
    run_stack(stack, BcpConfig(iterations=10, burn_in=2), workers=1)


@pytest.fixture(scope="session")
def small_scene():
    """24x24, 8 dates, flood band on the left third; cheap to sample."""
    spec = SceneSpec(
        height=24,
        width=24,
        n_dates=8,
        flood_polygon=((0.0, 0.0), (12.0, 0.0), (12.0, 24.0), (0.0, 24.0)),
        seed=3,
    )
    return synth_scene(spec)


@pytest.fixture(scope="session")
def small_probability(small_scene):
    stack, _ref = small_scene
    return run_stack(stack, BcpConfig(iterations=200, burn_in=20), workers=1)
