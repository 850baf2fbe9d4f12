import math

import numpy as np
import pytest

from orbistab.dynamics import CallableModel
from orbistab.pipeline import PipelineConfig, run_pipeline


@pytest.fixture(scope="session")
def butterfly():
    return run_pipeline(PipelineConfig.for_model("butterfly"))


@pytest.fixture(scope="session")
def pendubot():
    return run_pipeline(PipelineConfig.for_model("pendubot"))


@pytest.fixture(scope="session", params=["butterfly", "pendubot"])
def design(request):
    return request.getfixturevalue(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def unit_model(gravity=None):
    """M = I, C = 0, F = [1, 0]."""
    g = gravity or (lambda q: np.zeros(2))
    return CallableModel(lambda q: np.eye(2), lambda q, qd: np.zeros((2, 2)), g)


def sine_model():
    """Unit inertia with F_perp G = sin(theta - phi)."""
    return unit_model(lambda q: np.array([0.0, math.sin(q[0] - q[1])]))
