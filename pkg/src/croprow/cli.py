"""Command-line front end: synth, reconstruct, extract, plan.

Exit codes: 0 success, 1 usage error, 2 data error, 3 pipeline failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io as _io
import json
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import io
from .cloud import simplify_cloud
from .errors import (
    CroprowError, EmptyScene, IngestionError, InvalidSpec, NoGoalsFound, PlanningTimeout,
    SequenceFailure, StartInCollision,
)
from .geometry import RigidTransform
from .kinematics import chain_from_dict, chain_to_dict, reference_arm
from .mesh import decimate_mesh, mesh_from_cloud
from .planner import PlannerConfig, run_scenario
from .primitives import ExtractionParams, extract_primitives
from .reconstruction import PipelineConfig, register_sequence
from .registration import IcpParams
from .synth import DEFAULT_INTRINSICS, crop_row_scene, relative_poses, render_sequence, row_trajectory

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PIPELINE = 0, 1, 2, 3

# robot placement written by `synth`: standing in the aisle 0.35 m below the
# first camera, base z pointing up (camera x) and base x toward the plants (camera z)
AISLE_BASE = RigidTransform(np.array([[0.0, 0.0, 1.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0]]), (-0.35, 0.0, 0.0))


class UsageError(Exception):
    pass


# ---- configuration ---------------------------------------------------------------

SYNTH_KEYS = {"n_frames": 20, "step": 0.10, "standoff": 0.50, "row_length": 1.9, "depth_noise": 0.0,
              "jitter": 0.0, "jitter_angle_deg": 0.0}
EXTRACT_KEYS = {"mesh_voxel": 0.005, "mesh_target_faces": 20_000, "simplify": True}
RECONSTRUCT_KEYS = {"simplify_output": False}
ICP_PREFIX = "icp_"


def read_config(path) -> dict:
    """Flat key=value file; section headers are allowed and ignored."""
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    try:
        parser.read_string("[DEFAULT]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"bad config {path}: {exc}") from exc
    out = dict(parser.defaults())
    for section in parser.sections():
        out.update({k: v for k, v in parser.items(section)})
    return {k: v.strip().strip('"').strip("'") for k, v in out.items()}


def _coerce(raw: str, like):
    if isinstance(like, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {raw!r}")
    try:
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float) or like is None:
            return float(raw)
    except ValueError as exc:
        raise UsageError(f"expected a number, got {raw!r}") from exc
    return raw


def _known_keys() -> set:
    keys = set(SYNTH_KEYS) | set(EXTRACT_KEYS) | set(RECONSTRUCT_KEYS) | {"seed", "margin"}
    for cls in (PipelineConfig, PlannerConfig, ExtractionParams):
        keys |= {f.name for f in fields(cls)}
    keys |= {ICP_PREFIX + f.name for f in fields(IcpParams)}
    return keys


def _check_keys(conf: dict):
    unknown = sorted(set(conf) - _known_keys())
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")


def _build(cls, conf: dict, **extra):
    defaults = cls()
    kwargs = {}
    for f in fields(cls):
        if f.name in conf and f.name not in ("icp",):
            kwargs[f.name] = _coerce(conf[f.name], getattr(defaults, f.name))
    kwargs.update(extra)
    try:
        return replace(defaults, **kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad {cls.__name__} settings: {exc}") from exc


def pipeline_config(conf: dict) -> PipelineConfig:
    base = PipelineConfig().icp
    icp_kw = {f.name: _coerce(conf[ICP_PREFIX + f.name], getattr(base, f.name))
              for f in fields(IcpParams) if ICP_PREFIX + f.name in conf}
    try:
        icp = replace(base, **icp_kw)
    except ValueError as exc:
        raise UsageError(f"bad ICP settings: {exc}") from exc
    return _build(PipelineConfig, conf, icp=icp)


def _settings(conf: dict, table: dict) -> dict:
    return {k: _coerce(conf[k], v) if k in conf else v for k, v in table.items()}


# ---- commands ---------------------------------------------------------------------

def cmd_synth(args, conf) -> int:
    s = _settings(conf, SYNTH_KEYS)
    if s["n_frames"] < 1:
        raise UsageError("n_frames must be at least 1")
    if args.scene:
        try:
            scene = io.read_scene(args.scene)
        except IngestionError as exc:
            raise InvalidSpec(str(exc)) from exc
    else:
        scene = crop_row_scene(length=s["row_length"], standoff=s["standoff"], seed=args.seed)
    poses = row_trajectory(s["n_frames"], s["step"], jitter=s["jitter"],
                           jitter_angle=np.deg2rad(s["jitter_angle_deg"]), seed=args.seed)
    frames = render_sequence(scene, poses, DEFAULT_INTRINSICS, s["depth_noise"], seed=args.seed)
    out = Path(args.out)
    io.write_frames(out, frames)
    rel = relative_poses(poses)
    truth = {
        "seed": args.seed,
        "camera_poses_world": [p.as_matrix().tolist() for p in poses],
        "camera_poses_row": [p.as_matrix().tolist() for p in rel],
        "scene_world": io.scene_to_dict(scene),
        "scene_row": io.scene_to_dict(scene.transformed(poses[0].inverse())),
    }
    io.atomic_write(out / "ground_truth.json", io.dump_json(truth))
    # shift range covering a skipped frame (two steps) with 50% slack at this focal length and stand-off
    max_shift = int(np.ceil(1.5 * 2.0 * s["step"] * DEFAULT_INTRINSICS.fy / s["standoff"]))
    io.atomic_write(out / "reconstruct.cfg", f"max_shift = {max_shift}\nnominal_step = {s['step']}\n")
    io.atomic_write(out / "robot.json", io.dump_json(chain_to_dict(reference_arm(AISLE_BASE))))
    print(f"wrote {len(frames)} frames to {out}")
    return EXIT_OK


def cmd_reconstruct(args, conf) -> int:
    cfg = pipeline_config(conf)
    frames = io.read_frames(args.frames_dir)
    if len(frames) < 2:
        raise UsageError(f"{args.frames_dir}: need at least two frames, found {len(frames)}")
    cloud, report = register_sequence(frames, cfg)
    if _settings(conf, RECONSTRUCT_KEYS)["simplify_output"]:
        cloud = simplify_cloud(cloud, cfg.simplify_target)
    out = Path(args.out)
    io.write_ply(out / "row.ply", cloud)
    io.atomic_write(out / "registration.json", io.dump_json(io.report_to_dict(report, args.seed)))
    print(f"registered {len(report.frame_indices)} frames, skipped {report.skipped}, {len(cloud)} points")
    return EXIT_OK


def cmd_extract(args, conf) -> int:
    cfg = pipeline_config(conf)
    params = _build(ExtractionParams, conf, **({"seed": args.seed} if args.seed is not None else {}))
    s = _settings(conf, EXTRACT_KEYS)
    cloud = io.read_ply(args.ply)
    if len(cloud) == 0:
        raise IngestionError(f"{args.ply}: cloud is empty")
    if s["simplify"]:
        cloud = simplify_cloud(cloud, cfg.simplify_target)
    scene = extract_primitives(cloud, params)
    mesh = decimate_mesh(mesh_from_cloud(cloud, s["mesh_voxel"]), s["mesh_target_faces"])
    out = Path(args.out)
    doc = io.scene_to_dict(scene)
    doc["seed"] = params.seed
    io.atomic_write(out / "scene.json", io.dump_json(doc))
    io.write_off(out / "mesh.off", mesh)
    io.write_stl(out / "mesh.stl", mesh)
    print(f"extracted {len(scene.spheres)} spheres, {len(scene.capsules)} capsules; mesh {mesh.n_faces} faces")
    return EXIT_OK


def cmd_plan(args, conf) -> int:
    cfg = _build(PlannerConfig, conf, **({"seed": args.seed} if args.seed is not None else {}))
    margin = _coerce(conf["margin"], 0.0) if "margin" in conf else 0.0
    scene = io.read_scene(args.scene, margin)
    if args.robot:
        try:
            with open(args.robot) as fh:
                chain = chain_from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"{args.robot}: {exc}") from exc
    else:
        chain = reference_arm(AISLE_BASE)
    if args.target_id not in scene.targets:
        raise UsageError(f"target {args.target_id} is not a target sphere; targets are {scene.targets}")
    report = run_scenario(chain, scene, args.target_id, cfg)
    out = Path(args.out)
    io.atomic_write(out / "scenario.json", io.dump_json(report.to_dict(timings=not args.no_timings)))
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"q{i}" for i in range(chain.n_joints)])
    for q in report.path.waypoints:
        writer.writerow([repr(float(v)) for v in q])
    io.atomic_write(out / "waypoints.csv", buf.getvalue())
    rej = report.goals.rejections
    print("goal stage: " + ", ".join(f"{k} {v}" for k, v in rej.items()) + f", accepted {len(report.goals)}")
    print(f"path: {len(report.path.waypoints)} waypoints, length {report.path.length:.4f} rad")
    if not args.no_timings:
        print("timings (ms): " + ", ".join(f"{k} {v:.1f}" for k, v in report.timings_ms.items()))
    return EXIT_OK if report.valid else EXIT_PIPELINE


# ---- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--no-timings", action="store_true", help="omit wall-clock timings from outputs")
    parser = argparse.ArgumentParser(prog="croprow", description="Crop-row reconstruction and grasp planning.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="render a synthetic row sequence")
    p.add_argument("--scene", help="scene JSON to render (default: built-in crop row)")
    p = sub.add_parser("reconstruct", parents=[common], help="register frames into a row cloud")
    p.add_argument("frames_dir")
    p = sub.add_parser("extract", parents=[common], help="fit primitives and mesh a row cloud")
    p.add_argument("ply")
    p = sub.add_parser("plan", parents=[common], help="plan a grasp path to a target sphere")
    p.add_argument("scene")
    p.add_argument("target_id", type=int)
    p.add_argument("--robot", help="robot JSON (default: bundled arm in the aisle pose)")
    return parser


COMMANDS = {"synth": cmd_synth, "reconstruct": cmd_reconstruct, "extract": cmd_extract, "plan": cmd_plan}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    start = time.perf_counter()
    try:
        conf = read_config(args.config)
        _check_keys(conf)
        if args.seed is None and "seed" in conf:
            args.seed = _coerce(conf["seed"], 0)
        if args.seed is None:
            args.seed = 0
        code = COMMANDS[args.command](args, conf)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IngestionError, InvalidSpec) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SequenceFailure, EmptyScene, NoGoalsFound, PlanningTimeout, StartInCollision) as exc:
        print(f"pipeline failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except CroprowError as exc:
        print(f"pipeline failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    if not args.no_timings:
        print(f"done in {time.perf_counter() - start:.2f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
