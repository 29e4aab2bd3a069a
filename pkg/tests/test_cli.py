import json

import numpy as np
import pytest

from croprow import io
from croprow.cli import EXIT_DATA, EXIT_OK, EXIT_PIPELINE, EXIT_USAGE, main
from croprow.cloud import PointCloud
from croprow.scene import PrimitiveScene, SpherePrimitive


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def short_row(tmp_path_factory):
    """Three synthetic frames of the default crop row."""
    root = tmp_path_factory.mktemp("row")
    (root / "synth.cfg").write_text("n_frames = 3\n")
    assert run("synth", "--config", root / "synth.cfg", "--seed", 1, "--out", root / "frames") == EXIT_OK
    return root


def reachable_scene(path, obstacles=()):
    scene = PrimitiveScene([SpherePrimitive((0.0, 0.1, 0.5), 0.04)] + list(obstacles))
    io.write_scene(path, scene)
    return path


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == EXIT_USAGE


def test_unknown_config_key(tmp_path):
    (tmp_path / "c.cfg").write_text("no_such_key = 3\n")
    assert run("synth", "--config", tmp_path / "c.cfg", "--out", tmp_path / "o") == EXIT_USAGE


def test_synth_outputs(short_row):
    frames = short_row / "frames"
    names = sorted(p.name for p in frames.iterdir())
    assert "frame_0002_depth.png" in names and "intrinsics.json" in names
    truth = json.loads((frames / "ground_truth.json").read_text())
    poses = np.array(truth["camera_poses_row"])
    assert np.allclose(np.diff(poses[:, :3, 3], axis=0), [0.0, 0.1, 0.0], atol=1e-12)
    assert "max_shift" in (frames / "reconstruct.cfg").read_text()
    assert "joints" in json.loads((frames / "robot.json").read_text())


def test_synth_empty_scene_renders_nothing(tmp_path):
    io.write_scene(tmp_path / "empty.json", PrimitiveScene())
    (tmp_path / "c.cfg").write_text("n_frames = 2\n")
    assert run("synth", "--scene", tmp_path / "empty.json", "--config", tmp_path / "c.cfg",
               "--out", tmp_path / "f") == EXIT_OK
    for frame in io.read_frames(tmp_path / "f"):
        assert not frame.depth.any()


def test_synth_bad_scene_is_data_error(tmp_path):
    (tmp_path / "bad.json").write_text("[1, 2")
    assert run("synth", "--scene", tmp_path / "bad.json", "--out", tmp_path / "f") == EXIT_DATA


def test_reconstruct_needs_two_frames(short_row, tmp_path):
    one = io.read_frames(short_row / "frames")[:1]
    io.write_frames(tmp_path / "one", one)
    assert run("reconstruct", tmp_path / "one", "--out", tmp_path / "o") == EXIT_USAGE


def test_reconstruct_corrupt_png_is_data_error(short_row, tmp_path):
    io.write_frames(tmp_path / "f", io.read_frames(short_row / "frames"))
    (tmp_path / "f" / io.FRAME_COLOR.format(1)).write_bytes(b"\x89PNG broken")
    assert run("reconstruct", tmp_path / "f", "--out", tmp_path / "o") == EXIT_DATA


def test_reconstruct_recovers_steps_deterministically(short_row):
    frames = short_row / "frames"
    outs = []
    for k in range(2):
        out = short_row / f"rec{k}"
        assert run("reconstruct", frames, "--config", frames / "reconstruct.cfg", "--seed", 3,
                   "--out", out, "--no-timings") == EXIT_OK
        outs.append(out)
    doc = json.loads((outs[0] / "registration.json").read_text())
    truth = np.array(json.loads((frames / "ground_truth.json").read_text())["camera_poses_row"])
    assert doc["skipped"] == []
    for est, ref in zip(doc["poses"], truth):
        assert np.linalg.norm(np.array(est)[:3, 3] - ref[:3, 3]) < 0.002
    assert (outs[0] / "registration.json").read_bytes() == (outs[1] / "registration.json").read_bytes()
    assert len(io.read_ply(outs[0] / "row.ply")) > 0


def test_extract_empty_ply_is_data_error(tmp_path):
    io.write_ply(tmp_path / "e.ply", PointCloud(np.zeros((0, 3))))
    assert run("extract", tmp_path / "e.ply", "--out", tmp_path / "o") == EXIT_DATA


def test_extract_noise_is_pipeline_error(tmp_path):
    pts = np.random.default_rng(0).uniform(0, 1, (3000, 3))
    io.write_ply(tmp_path / "n.ply", PointCloud(pts))
    (tmp_path / "c.cfg").write_text("min_fraction = 0.5\ncluster_distance = 0.2\ndistance_tol = 0.001\n")
    assert run("extract", tmp_path / "n.ply", "--config", tmp_path / "c.cfg", "--out", tmp_path / "o") == EXIT_PIPELINE


def test_plan_writes_path(tmp_path):
    scene = reachable_scene(tmp_path / "s.json")
    for k in range(2):
        assert run("plan", scene, 0, "--seed", 5, "--no-timings", "--out", tmp_path / f"p{k}") == EXIT_OK
    rows = (tmp_path / "p0" / "waypoints.csv").read_text().splitlines()
    assert rows[0] == "q0,q1,q2,q3,q4,q5" and len(rows) >= 3
    doc = json.loads((tmp_path / "p0" / "scenario.json").read_text())
    assert doc["path_valid"] is True and "timings_ms" not in doc
    for name in ("scenario.json", "waypoints.csv"):
        assert (tmp_path / "p0" / name).read_bytes() == (tmp_path / "p1" / name).read_bytes()


def test_plan_rejects_non_target(tmp_path):
    scene = reachable_scene(tmp_path / "s.json", [SpherePrimitive((2, 2, 2), 0.1, role="obstacle")])
    assert run("plan", scene, 1, "--out", tmp_path / "o") == EXIT_USAGE
    assert run("plan", scene, 7, "--out", tmp_path / "o") == EXIT_USAGE


def test_plan_unreachable_target_is_pipeline_error(tmp_path):
    io.write_scene(tmp_path / "far.json", PrimitiveScene([SpherePrimitive((0.0, 0.0, 5.0), 0.04)]))
    (tmp_path / "c.cfg").write_text("max_fk_samples = 200\n")
    assert run("plan", tmp_path / "far.json", 0, "--config", tmp_path / "c.cfg", "--out", tmp_path / "o") == EXIT_PIPELINE


def test_plan_bad_robot_is_data_error(tmp_path):
    scene = reachable_scene(tmp_path / "s.json")
    (tmp_path / "r.json").write_text(json.dumps({"joints": "nope"}))
    assert run("plan", scene, 0, "--robot", tmp_path / "r.json", "--out", tmp_path / "o") == EXIT_DATA
