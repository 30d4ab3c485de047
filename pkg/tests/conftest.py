import numpy as np
import pytest

from relpose.geom import Pose, UnitQuaternion


def random_quat(rng):
    return UnitQuaternion(*rng.normal(size=4))


def random_pose(rng, scale=1.0):
    return Pose(random_quat(rng), rng.normal(scale=scale, size=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
