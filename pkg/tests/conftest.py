import json
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from cascade_hum.cascade import CascadeConfig, CascadeState  # noqa: E402
from cascade_hum.descriptors import Bump, Constant  # noqa: E402
from cascade_hum.observation import ObservationSpec  # noqa: E402

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")
L = np.pi


def load_config(name):
    with open(os.path.join(CONFIG_DIR, name)) as fh:
        return json.load(fh)


def coupling_bump():
    return Bump(2.2, 2.6, 1.0, 0.2)


def control_bump():
    return Bump(0.3, 0.9, 1.0, 0.2)


def n2_config(N, coupling=None):
    c = coupling_bump() if coupling is None else coupling
    return CascadeConfig(n=2, L=L, N=N, subdiagonal=[c], regions=[(2.2, 2.6)])


def interior_control(target=2):
    return ObservationSpec.interior(control_bump(), (0.3, 0.9), target)


def n2_initial(N):
    u = np.zeros((2, N))
    v = np.zeros((2, N))
    u[0, :3] = [1.0, 0.5, -0.3]
    v[1, :2] = [0.4, 1.0]
    return CascadeState(u, v, L)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def zero_coupling():
    return Constant(0.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
