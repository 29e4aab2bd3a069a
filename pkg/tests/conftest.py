import numpy as np
import pytest

from croprow.cloud import CameraIntrinsics, RGBDFrame
from croprow.geometry import RigidTransform


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    return RigidTransform.from_axis_angle(axis, rng.uniform(-max_angle, max_angle)).rotation


def random_transform(rng, max_angle=np.pi, max_translation=1.0):
    t = rng.normal(size=3)
    t *= rng.uniform(0, max_translation) / np.linalg.norm(t)
    return RigidTransform(random_rotation(rng, max_angle), t)


def plane_frame(depth_m, mask, intr=None, index=0):
    """Frame of a fronto-parallel plane at ``depth_m`` visible where ``mask`` is set."""
    h, w = mask.shape
    intr = intr or CameraIntrinsics(100.0, 100.0, (w - 1) / 2, (h - 1) / 2, w, h)
    depth = np.where(mask, depth_m * 1000.0, 0.0)
    color = np.zeros((h, w, 3), np.uint8)
    color[mask] = (10, 200, 30)
    return RGBDFrame(color, depth, intr, index)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
