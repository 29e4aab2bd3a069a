"""End-to-end acceptance checks, one test per requirement, at the required tolerances."""

import json
import time

import numpy as np
import pytest

from croprow import cli
from croprow.cloud import (
    PointCloud, RGBDFrame, deproject, neighbor_counts, radius_outlier_removal, simplify_cloud, transform_cloud,
)
from croprow.errors import NoGoalsFound, PlanningTimeout
from croprow.geometry import RigidTransform, rotation_angle, rotation_log
from croprow.kinematics import JointSpec, KinematicChain, LinkCapsule, fk, jacobian, reference_arm, tip_position
from croprow.mesh import decimate_mesh, uv_sphere
from croprow.planner import (
    PlannerConfig, configs_free, grasp_point, interpolate, plan, run_scenario, sample_goal_configs, validate_path,
)
from croprow.primitives import fit_cylinder_ransac, fit_sphere_ransac
from croprow.reconstruction import PipelineConfig, register_sequence
from croprow.registration import IcpParams, icp
from croprow.scene import CapsulePrimitive, PrimitiveScene, SpherePrimitive
from croprow.synth import ROW_CAMERA_ROTATION, crop_row_scene, relative_poses, render_sequence, row_trajectory

from conftest import random_rotation

# focal length 280 px at 0.5 m: a two-step gap (0.2 m) is 112 px, so 168 leaves 50% slack
ROW_CONFIG = PipelineConfig(max_shift=168)


@pytest.fixture(scope="module")
def row():
    poses = row_trajectory(20, 0.10)
    frames = render_sequence(crop_row_scene(background=False), poses)
    return frames, relative_poses(poses)


def pose_errors(report, truth):
    out = []
    for k, pose in zip(report.frame_indices, report.poses):
        gt = truth[k]
        out.append((np.linalg.norm(pose.translation - gt.translation),
                    np.degrees(rotation_angle(pose.rotation.T @ gt.rotation))))
    return np.array(out)


def test_registration_recovers_row_poses(row):
    frames, truth = row
    t0 = time.perf_counter()
    _, report = register_sequence(frames, ROW_CONFIG)
    elapsed = time.perf_counter() - t0
    assert report.skipped == []
    err = pose_errors(report, truth)
    assert err[:, 0].max() < 2e-3, f"worst translation error {err[:, 0].max() * 1e3:.3f} mm"
    assert err[:, 1].max() < 0.5, f"worst rotation error {err[:, 1].max():.3f} deg"
    assert elapsed < 60.0, f"took {elapsed:.1f} s"


def test_blank_frames_are_skipped(row):
    frames, truth = row
    frames = list(frames)
    for k in (5, 12):
        f = frames[k]
        frames[k] = RGBDFrame(f.color * 0, np.zeros_like(f.depth), f.intrinsics, f.index)
    _, report = register_sequence(frames, ROW_CONFIG)
    assert set(report.skipped) == {5, 12}
    err = pose_errors(report, truth)
    assert err[:, 0].max() < 2e-3 and err[:, 1].max() < 0.5


def test_icp_recovers_hundred_transforms():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    for _ in range(100):
        src = rng.normal(size=(2000, 3)) * [0.5, 0.3, 0.15]
        diameter = np.linalg.norm(np.ptp(src, axis=0))
        trans = rng.normal(size=3)
        trans *= rng.uniform(0, 0.1) / np.linalg.norm(trans)
        truth = RigidTransform(random_rotation(rng, np.deg2rad(10)), trans)
        r = icp(PointCloud(src), PointCloud(truth.apply(src)), params=IcpParams(300, diameter, 0.0))
        rot_err, trans_err = r.transform.distance_to(truth)
        assert rot_err < 1e-6 and trans_err < 1e-6
    assert time.perf_counter() - t0 < 30.0


def test_outlier_removal_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(1, 2001))
        if rng.random() < 0.5:
            pts = rng.uniform(0, 1, size=(n, 3)) * rng.uniform(0.1, 2.0)
            radius = float(rng.uniform(0.02, 0.3))
        else:
            # lattice points put many neighbors exactly at the radius
            pts = rng.integers(0, 12, size=(n, 3)) * 0.01
            radius = 0.01 * float(rng.integers(1, 4))
        k = int(rng.integers(1, 8))
        diff = pts[:, None] - pts[None]
        counts = ((diff * diff).sum(axis=2) < radius * radius).sum(axis=1) - 1
        assert np.array_equal(neighbor_counts(pts, radius), counts)
        kept = radius_outlier_removal(PointCloud(pts), radius, k)
        assert np.array_equal(kept.points, pts[counts >= k])


def _surface_samples(scene, n, rng):
    """Uniform-ish samples over the surfaces of a scene's primitives, ``n`` points in total."""
    areas = [4 * np.pi * s.radius ** 2 for s in scene.spheres]
    areas += [2 * np.pi * c.radius * c.length + 4 * np.pi * c.radius ** 2 for c in scene.capsules]
    counts = rng.multinomial(n, np.array(areas) / sum(areas))
    parts = []
    for s, m in zip(scene.spheres, counts):
        v = rng.normal(size=(m, 3))
        parts.append(s.center + s.radius * v / np.linalg.norm(v, axis=1, keepdims=True))
    for c, m in zip(scene.capsules, counts[len(scene.spheres):]):
        u = c.axis
        e1 = np.cross(u, [1.0, 0.0, 0.0] if abs(u[0]) < 0.9 else [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(u, e1)
        ang = rng.uniform(0, 2 * np.pi, m)
        h = rng.uniform(0, c.length, m)
        parts.append(c.a + h[:, None] * u + c.radius * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2))
    return np.concatenate(parts)


def test_simplification_brackets_target():
    pts = _surface_samples(crop_row_scene(background=False), 295_490, np.random.default_rng(3))
    assert len(pts) == 295_490
    t0 = time.perf_counter()
    out = simplify_cloud(PointCloud(pts), 10_000)
    assert time.perf_counter() - t0 < 20.0
    assert 10_000 <= len(out) <= 11_000


def _single_view(scene, depth_noise=0.0):
    pose = RigidTransform(ROW_CAMERA_ROTATION, (0.0, 0.0, 0.0))
    frame = render_sequence(scene, [pose], depth_noise=depth_noise, seed=5)[0]
    return transform_cloud(deproject(frame, 2.0), pose)


def test_primitive_recovery():
    sphere = SpherePrimitive((0.0, 0.45, 0.02), 0.04)
    cloud = _single_view(PrimitiveScene([sphere], []))
    fit = fit_sphere_ransac(cloud, 0.001)
    assert np.linalg.norm(fit.center - sphere.center) < 1e-3
    assert abs(fit.radius - sphere.radius) < 1e-3

    capsule = CapsulePrimitive((-0.2, 0.5, -0.25), (0.15, 0.5, 0.25), 0.015)
    cap_fit = fit_cylinder_ransac(_single_view(PrimitiveScene([], [capsule])), 0.001)
    angle = np.arccos(min(abs(float(cap_fit.axis @ capsule.axis)), 1.0))
    assert angle < 0.01

    noisy = _single_view(PrimitiveScene([sphere], []), depth_noise=0.002)
    noisy_fit = fit_sphere_ransac(noisy, 0.006)
    assert abs(noisy_fit.radius - sphere.radius) < 0.1 * sphere.radius


def test_decimation_keeps_sphere_shape():
    mesh = uv_sphere(1.0, 100, 101)
    assert 19_000 <= mesh.n_faces <= 21_000
    out = decimate_mesh(mesh, 2000)
    assert out.n_faces <= 2000
    r = np.linalg.norm(out.vertices, axis=1)
    assert np.all(np.abs(r - 1.0) <= 0.05)


def _numeric_jacobian(chain, q, h=1e-6):
    """Central differences of tip position and of tip orientation (as an axis-angle increment)."""
    cols = []
    for i in range(len(q)):
        dq = np.zeros_like(q)
        dq[i] = h
        plus, _ = fk(chain, q + dq)
        minus, _ = fk(chain, q - dq)
        lin = (plus.translation - minus.translation) / (2 * h)
        ang = rotation_log(plus.rotation @ minus.rotation.T) / (2 * h)
        cols.append(np.concatenate([lin, ang]))
    return np.array(cols).T


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(2)
    one = KinematicChain([JointSpec((0, 1, 0))], RigidTransform.from_translation((0.3, 0.0, 0.1)),
                         [LinkCapsule((0, 0, 0), (0.3, 0, 0.1), 0.02)])
    two = KinematicChain([JointSpec((0, 0, 1)),
                          JointSpec((0, 1, 0), RigidTransform.from_translation((0.4, 0.0, 0.0)))],
                         RigidTransform.from_translation((0.35, 0.0, 0.0)))
    for chain in (one, two, reference_arm()):
        for _ in range(100):
            q = chain.lower + (chain.upper - chain.lower) * rng.random(chain.n_joints)
            assert np.abs(jacobian(chain, q) - _numeric_jacobian(chain, q)).max() < 1e-5


def test_goal_set_contract():
    chain = reference_arm()
    cfg = PlannerConfig()
    assert (cfg.ik_trigger_threshold, cfg.dedup_tolerance, cfg.goal_count) == (0.65, 0.01, 60)
    scene = PrimitiveScene([SpherePrimitive((0.45, 0.1, 0.6), 0.04)], [])
    target = np.array([0.41, 0.1, 0.6])
    goals = sample_goal_configs(chain, scene, target, cfg)
    assert len(goals) == 60
    q = np.array(goals.configurations)
    for qi, err in zip(q, goals.tip_errors):
        assert err <= cfg.ik_tol
        assert np.linalg.norm(target - tip_position(chain, qi)) <= cfg.ik_tol
    diff = np.abs(q[:, None] - q[None]).max(axis=2)
    assert np.all(diff[~np.eye(len(q), dtype=bool)] > cfg.dedup_tolerance)
    again = sample_goal_configs(chain, scene, target, cfg)
    assert np.array(again.configurations).tobytes() == q.tobytes()
    assert np.array(again.tip_errors).tobytes() == np.array(goals.tip_errors).tobytes()


def _planar_two_link():
    joints = [JointSpec((0, 0, 1)), JointSpec((0, 0, 1), RigidTransform.from_translation((0.5, 0, 0)))]
    caps = [LinkCapsule((0, 0, 0), (0.5, 0, 0), 0.02), LinkCapsule((0, 0, 0), (0.4, 0, 0), 0.02)]
    return KinematicChain(joints, RigidTransform.from_translation((0.4, 0, 0)), caps)


def test_planning_detours_and_fails_cleanly():
    chain = _planar_two_link()
    scene = PrimitiveScene([SpherePrimitive((0.0, 0.75, 0.0), 0.1, role="obstacle")], [])
    start, goal = np.array([0.0, 0.0]), np.array([np.pi - 0.2, 0.0])
    cfg = PlannerConfig()
    straight = interpolate(start, goal, cfg.collision_resolution / 100)
    assert not configs_free(chain, scene, straight).all()
    t0 = time.perf_counter()
    path = plan(chain, scene, start, [goal], cfg)
    assert time.perf_counter() - t0 < 10.0
    assert validate_path(chain, scene, path, cfg.collision_resolution / 10)
    assert np.allclose(path.waypoints[0], start) and np.allclose(path.waypoints[-1], goal)

    # fruit buried inside a solid obstacle: no collision-free grasp exists
    arm = reference_arm()
    fruit = SpherePrimitive((0.45, 0.0, 0.6), 0.04)
    enclosed = PrimitiveScene([fruit, SpherePrimitive(fruit.center, 0.15, role="obstacle")], [])
    buried = sample_goal_configs(arm, PrimitiveScene([fruit], []), grasp_point(arm, enclosed, 0),
                                 PlannerConfig(goal_count=5))
    for seed in range(100):
        small = PlannerConfig(seed=seed, max_fk_samples=100, max_planner_iterations=500)
        with pytest.raises(NoGoalsFound):
            run_scenario(arm, enclosed, 0, small)
        with pytest.raises(PlanningTimeout):
            plan(arm, enclosed, np.zeros(arm.n_joints), buried, small)


def test_cli_round_trip(tmp_path):
    t0 = time.perf_counter()
    frames, recon, ext, planned = (tmp_path / d for d in ("frames", "recon", "extract", "plan"))
    assert cli.main(["synth", "--out", str(frames), "--seed", "0", "--no-timings"]) == 0
    assert cli.main(["reconstruct", str(frames), "--config", str(frames / "reconstruct.cfg"),
                     "--out", str(recon), "--no-timings"]) == 0
    assert cli.main(["extract", str(recon / "row.ply"), "--out", str(ext), "--no-timings"]) == 0

    doc = json.loads((ext / "scene.json").read_text())
    spheres = [s for s in doc["spheres"] if s["role"] == "target"]
    assert len(spheres) == 2
    robot = json.loads((frames / "robot.json").read_text())
    base = np.array(robot["base"]["translation"])
    nearest = min(range(len(doc["spheres"])),
                  key=lambda i: np.inf if doc["spheres"][i]["role"] != "target"
                  else np.linalg.norm(np.array(doc["spheres"][i]["center"]) - base))
    code = cli.main(["plan", str(ext / "scene.json"), str(nearest), "--robot", str(frames / "robot.json"),
                     "--out", str(planned), "--no-timings"])
    assert code == 0
    report = json.loads((planned / "scenario.json").read_text())
    assert report["path_valid"] and len(report["path_waypoints"]) >= 2
    assert time.perf_counter() - t0 < 180.0
