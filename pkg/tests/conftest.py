import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from plenreg.se3 import Pose


def random_rotation(rng, max_angle_deg=180.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0.0, max_angle_deg))
    return Rotation.from_rotvec(angle * axis).as_matrix()


def random_pose(rng, parent="A", child="B", max_angle_deg=180.0, max_shift=1000.0):
    return Pose(
        random_rotation(rng, max_angle_deg),
        rng.uniform(-max_shift, max_shift, size=3),
        parent,
        child,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
