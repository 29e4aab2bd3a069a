import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from croprow.cloud import RGBDFrame, deproject
from croprow.errors import DegenerateMask, EmptyForeground, PairFailure, SequenceFailure
from croprow.geometry import RigidTransform, rotation_angle
from croprow.reconstruction import (
    CameraRig, PipelineConfig, continuous_windows, densified_cloud, fuse_rig, register_pair, register_sequence,
    smooth_depth,
)
from croprow.registration import IcpResult
from croprow.synth import crop_row_scene, relative_poses, render_sequence, row_trajectory

from conftest import plane_frame

CFG = PipelineConfig(max_shift=168)


@pytest.fixture(scope="module")
def two_frames():
    poses = row_trajectory(2, 0.10)
    frames = render_sequence(crop_row_scene(background=False), poses)
    return frames, relative_poses(poses)[1]


def test_config_validation():
    for bad in ({"depth_cutoff": 0}, {"max_shift": -1}, {"min_fitness": 0.0}, {"outlier_radius": -1.0}):
        with pytest.raises(ValueError):
            PipelineConfig(**bad)


def test_fuse_identical_views_triplicates():
    frame = plane_frame(0.5, np.ones((8, 10), bool))
    rig = CameraRig(RigidTransform.identity(), RigidTransform.identity(), RigidTransform.identity(), 0.0, 0.0)
    cloud = fuse_rig(frame, frame, frame, rig, 0.6)
    single = deproject(frame, 0.6)
    assert len(cloud) == 3 * len(single)
    assert np.array_equal(cloud.points[: len(single)], single.points)


def test_fuse_places_views_by_extrinsics():
    frame = plane_frame(0.5, np.ones((8, 10), bool))
    empty = plane_frame(0.5, np.zeros((8, 10), bool))
    rig = CameraRig.standard()
    cloud = fuse_rig(frame, empty, empty, rig, 0.6)
    assert np.allclose(cloud.points, rig.left.apply(deproject(frame, 0.6).points))
    with pytest.raises(EmptyForeground):
        fuse_rig(empty, empty, empty, rig, 0.6)


def test_standard_rig_is_symmetric():
    rig = CameraRig.standard(spacing=0.3, toe_in=0.4)
    assert np.allclose(rig.left.translation, -rig.right.translation)
    assert rotation_angle(rig.left.rotation) == pytest.approx(0.4)
    # both outer optical axes tilt toward the center camera
    assert (rig.left.rotation @ [0, 0, 1])[0] > 0 > (rig.right.rotation @ [0, 0, 1])[0]


def test_register_identical_frames(two_frames):
    (first, _), _ = two_frames
    res = register_pair(first, first, CFG)
    assert np.linalg.norm(res.transform.translation) < 1e-3
    assert rotation_angle(res.transform.rotation) < np.deg2rad(0.1)


def test_register_row_step(two_frames):
    (first, second), truth = two_frames
    res = register_pair(first, second, CFG)
    assert np.linalg.norm(res.transform.translation - truth.translation) < 1e-3
    assert rotation_angle(res.transform.rotation @ truth.rotation.T) < np.deg2rad(0.5)
    assert res.fitness > 0.5


def test_blank_second_frame_is_pair_failure(two_frames):
    (first, second), _ = two_frames
    blank = RGBDFrame(second.color, np.zeros_like(second.depth), second.intrinsics, second.index)
    with pytest.raises(PairFailure) as info:
        register_pair(first, blank, CFG)
    assert isinstance(info.value.cause, DegenerateMask)


def fake_pair(step=0.1, fail=()):
    """Pair function stepping ``step`` per frame index along y and failing on the listed indices."""
    calls = []

    def pair_fn(first, second, cfg):
        calls.append((first.index, second.index))
        if second.index in fail:
            raise PairFailure(DegenerateMask("forced"))
        t = RigidTransform(RigidTransform.from_axis_angle((0, 0, 1), 0.01).rotation,
                           (0.0, step * (second.index - first.index), 0.0))
        return IcpResult(t, 0.9, 1e-4)

    return pair_fn, calls


def plane_sequence(n):
    return [plane_frame(0.5, np.ones((6, 8), bool), index=k) for k in range(n)]


def test_sequence_chains_and_skips():
    pair_fn, calls = fake_pair(fail={3, 4})
    cloud, report = register_sequence(plane_sequence(7), CFG, pair_fn=pair_fn, remove_outliers=False)
    assert report.frame_indices == [0, 1, 2, 5, 6]
    assert report.skipped == [3, 4]
    assert set(report.failures) == {3, 4}
    # failures are retried against the last accepted frame
    assert calls == [(0, 1), (1, 2), (2, 3), (2, 4), (2, 5), (5, 6)]
    expected = RigidTransform.identity()
    prev = 0
    for idx, pose in zip(report.frame_indices[1:], report.poses[1:]):
        expected = expected @ pair_fn(plane_sequence(idx + 1)[prev], plane_sequence(idx + 1)[idx], CFG).transform
        assert np.allclose(pose.as_matrix(), expected.as_matrix(), atol=1e-9)
        prev = idx
    assert len(cloud) == 5 * 48
    assert report.pose_of(5) is report.poses[3]


def test_implausible_step_is_skipped():
    pair_fn, _ = fake_pair(step=1.0)
    with pytest.raises(SequenceFailure):
        register_sequence(plane_sequence(3), CFG, pair_fn=pair_fn)


def test_all_pairs_failing_raises():
    pair_fn, _ = fake_pair(fail={1, 2, 3})
    with pytest.raises(SequenceFailure):
        register_sequence(plane_sequence(4), CFG, pair_fn=pair_fn)


def test_empty_first_frame_raises():
    frames = [plane_frame(0.5, np.zeros((6, 8), bool))] + plane_sequence(2)[1:]
    with pytest.raises(SequenceFailure):
        register_sequence(frames, CFG)
    with pytest.raises(ValueError):
        register_sequence(frames[:1], CFG)


def test_identical_frames_register_to_identity(two_frames):
    (first, _), _ = two_frames
    frames = [RGBDFrame(first.color, first.depth, first.intrinsics, k) for k in range(3)]
    _, report = register_sequence(frames, CFG)
    for pose in report.poses:
        assert np.linalg.norm(pose.translation) < 1e-3


def brute_windows(z, mask, size, off, max_jump):
    h, w = z.shape
    out = np.zeros((h, w), bool)
    for r in range(h):
        for c in range(w):
            r0, c0 = r - off, c - off
            if r0 < 0 or c0 < 0 or r0 + size > h or c0 + size > w:
                continue
            win, m = z[r0:r0 + size, c0:c0 + size], mask[r0:r0 + size, c0:c0 + size]
            out[r, c] = m.all() and win.max() - win.min() < max_jump
    return out


@given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 0), (4, 1), (3, 1)]))
@settings(max_examples=40, deadline=None)
def test_continuous_windows_matches_brute_force(seed, shape):
    size, off = shape
    rng = np.random.default_rng(seed)
    z = rng.choice([0.5, 0.5005, 0.52], size=(9, 11))
    mask = rng.random((9, 11)) > 0.1
    assert np.array_equal(continuous_windows(z, mask, size, off, 0.01), brute_windows(z, mask, size, off, 0.01))


def test_smoothing_keeps_planes_and_edges(rng):
    depth = np.full((20, 20), 500.0)
    depth[:, 10:] = 800.0
    depth[3, 3] = 0.0
    frame = plane_frame(0.5, np.ones((20, 20), bool))
    frame = RGBDFrame(frame.color, depth, frame.intrinsics, 0)
    out = smooth_depth(frame, 5).depth
    assert np.array_equal(out, depth)
    noisy = RGBDFrame(frame.color, np.round(500.0 + rng.normal(0, 0.5, (20, 20))), frame.intrinsics, 0)
    sm = smooth_depth(noisy, 5).depth
    assert sm[5:15, 5:15].std() < noisy.depth[5:15, 5:15].std()
    assert smooth_depth(frame, 1) is frame


def test_densified_cloud_on_plane():
    frame = plane_frame(0.5, np.ones((10, 12), bool))
    for jitter in (False, True):
        cloud = densified_cloud(frame, 0.6, 3, jitter=jitter)
        assert len(cloud) == 120 + 8 * 9 * 11
        assert np.allclose(cloud.points[:, 2], 0.5)
    a = densified_cloud(frame, 0.6, 3, jitter=True, seed=2)
    b = densified_cloud(frame, 0.6, 3, jitter=True, seed=2)
    assert np.array_equal(a.points, b.points)
    assert len(densified_cloud(frame, 0.6, 1)) == 120


def test_densified_cloud_skips_depth_jumps():
    mask = np.ones((10, 12), bool)
    frame = plane_frame(0.5, mask)
    depth = frame.depth.copy()
    depth[:, 6:] = 550.0
    step = RGBDFrame(frame.color, depth, frame.intrinsics, 0)
    z = densified_cloud(step, 0.6, 2).points[:, 2]
    # no interpolated sample lands between the two surfaces
    assert np.all((np.abs(z - 0.5) < 1e-12) | (np.abs(z - 0.55) < 1e-12))
