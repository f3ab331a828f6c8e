import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fingerexo.geometry import load_geometry
from fingerexo.kinematics import SolveOptions

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

LOOSE = SolveOptions(check_bounds=False)


@pytest.fixture(scope="session")
def index_geom():
    return load_geometry("index")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def deg(*v):
    return tuple(math.radians(x) for x in v)
