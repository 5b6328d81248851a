import numpy as np
import pytest

from rieszlab.geometry import BallSpec, GridSpec, make_ball


@pytest.fixture(scope="session")
def disk256():
    spec = GridSpec.centered(2, 256, 3.0)
    return make_ball(spec, BallSpec((0.0, 0.0), 1.0))


@pytest.fixture(scope="session")
def unit_disk128():
    spec = GridSpec.centered(2, 128, 1.6)
    return make_ball(spec, BallSpec.from_measure((0.0, 0.0), 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
