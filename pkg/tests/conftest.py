"""Shared fixtures; the expensive trajectory renders run once per session."""

import numpy as np
import pytest

from splatsort.fixtures import two_gaussian_popping
from splatsort.metrics import trajectory_flows, view_consistency
from splatsort.rasterizer import (
    FullPerPixel,
    GlobalZ,
    Hierarchical,
    RenderConfig,
    render_depth,
)

# Offsets shared by the consistency tests: short lags for the trend
# checks, one long lag where the swap noise floor is fully developed.
POP_OFFSETS = (1, 2, 4, 7, 40)


@pytest.fixture(scope="session")
def popping_scene():
    return two_gaussian_popping()


@pytest.fixture(scope="session")
def popping_runs(popping_scene):
    """Render the popping path under three modes and score each one.

    Flow is rebuilt from each mode's own depth so every mode is judged
    against its own geometry.  Returns mode -> {frames, report}.
    """
    scene, cams, _ = popping_scene
    cfg = RenderConfig()
    runs = {}
    for name, mode in (
        ("globalz", GlobalZ()),
        ("full", FullPerPixel()),
        ("hier", Hierarchical()),
    ):
        frames = [render_depth(scene, cam, mode, cfg) for cam in cams]
        fwd, bwd = trajectory_flows(frames, cams, POP_OFFSETS)
        report = view_consistency(frames, fwd, bwd, offsets=POP_OFFSETS)
        runs[name] = {"frames": frames, "report": report}
    return runs


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
