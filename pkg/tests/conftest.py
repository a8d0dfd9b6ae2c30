import math

import numpy as np
import pytest
from hypothesis import strategies as st

from relate3d.geometry import Box3D


def random_box(rng, spread=1.5, size=(0.5, 4.0)):
    return Box3D(rng.normal(0, spread), rng.normal(0, spread), rng.normal(0, 0.5),
                 rng.uniform(*size), rng.uniform(*size), rng.uniform(*size),
                 rng.uniform(-math.pi, math.pi))


def straight_line_mlp(params, x):
    """Plain numpy MLP evaluation, no tape."""
    h = np.asarray(x, dtype=float)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = np.einsum("ij,jk->ik", h, w) + b
        if k < len(params.weights) - 1:
            h = np.maximum(h, 0.0)
    return h


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


finite = st.floats(-20, 20, allow_nan=False)
sizes = st.floats(0.2, 5.0, allow_nan=False)
angles = st.floats(-math.pi, math.pi, allow_nan=False)


@st.composite
def boxes(draw):
    return Box3D(draw(finite), draw(finite), draw(st.floats(-2, 2)), draw(sizes), draw(sizes), draw(sizes),
                 draw(angles))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
