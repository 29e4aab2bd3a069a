"""File formats: PLY clouds, PNG frames, JSON scenes/robots/reports, OFF/STL meshes."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .cloud import CameraIntrinsics, PointCloud, RGBDFrame
from .errors import IngestionError
from .geometry import RigidTransform
from .mesh import TriangleMesh
from .scene import CapsulePrimitive, PrimitiveScene, SpherePrimitive


def atomic_write(path, data: bytes | str) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"{path}: {exc}") from exc


# ---- PLY --------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def ply_bytes(cloud: PointCloud, binary: bool = True) -> bytes:
    n = len(cloud)
    props = ["property float x", "property float y", "property float z"]
    has_color = cloud.colors is not None
    if has_color:
        props += ["property uchar red", "property uchar green", "property uchar blue"]
    fmt = "binary_little_endian" if binary else "ascii"
    header = "\n".join(["ply", f"format {fmt} 1.0", f"element vertex {n}", *props, "end_header"]) + "\n"
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if has_color:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.empty(n, dtype=fields)
    for i, name in enumerate("xyz"):
        rec[name] = cloud.points[:, i]
    if has_color:
        for i, name in enumerate(("red", "green", "blue")):
            rec[name] = cloud.colors[:, i]
    if binary:
        return header.encode("ascii") + rec.tobytes()
    lines = []
    for r in rec:
        vals = [repr(float(r[k])) for k in "xyz"]
        if has_color:
            vals += [str(int(r[k])) for k in ("red", "green", "blue")]
        lines.append(" ".join(vals))
    return (header + "".join(line + "\n" for line in lines)).encode("ascii")


def write_ply(path, cloud: PointCloud, binary: bool = True) -> None:
    atomic_write(path, ply_bytes(cloud, binary))


def read_ply(path) -> PointCloud:
    """Read the vertex element of an ASCII or binary-little-endian PLY file."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise IngestionError(f"{path}: not a PLY file")
    body_start = raw.index(b"\n", end) + 1
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements: list[tuple[str, int, list]] = []
    for line in header:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise IngestionError(f"{path}: property before element")
            if tok[1] == "list":
                elements[-1][2].append((tok[-1], None))
            elif tok[1] in _PLY_TYPES:
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
            else:
                raise IngestionError(f"{path}: unknown PLY type {tok[1]}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise IngestionError(f"{path}: unsupported PLY format {fmt}")
    if not elements or elements[0][0] != "vertex":
        raise IngestionError(f"{path}: first element must be vertex")
    _, n, props = elements[0]
    if any(t is None for _, t in props):
        raise IngestionError(f"{path}: list properties on vertices are not supported")
    names = [p for p, _ in props]
    if not {"x", "y", "z"} <= set(names):
        raise IngestionError(f"{path}: vertex element lacks x/y/z")
    body = raw[body_start:]
    try:
        if fmt == "ascii":
            rows = body.decode("ascii").split("\n")
            rows = [r for r in rows if r.strip()][:n]
            if len(rows) < n:
                raise ValueError("truncated vertex list")
            table = np.array([r.split()[: len(names)] for r in rows], dtype=float).reshape(n, len(names))
            rec = {name: table[:, i] for i, name in enumerate(names)}
        else:
            dt = np.dtype([(name, "<" + t) for name, t in props])
            if len(body) < n * dt.itemsize:
                raise ValueError("truncated binary body")
            arr = np.frombuffer(body, dtype=dt, count=n)
            rec = {name: arr[name] for name in names}
    except ValueError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(float)
    colors = None
    if {"red", "green", "blue"} <= set(names):
        colors = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1).astype(np.uint8)
    try:
        return PointCloud(pts, colors)
    except ValueError as exc:
        raise IngestionError(f"{path}: {exc}") from exc


# ---- frames ------------------------------------------------------------------

def _png_bytes(img: Image.Image) -> bytes:
    import io as _io

    buf = _io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def write_depth_png(path, depth_mm: np.ndarray) -> None:
    d = np.rint(np.asarray(depth_mm, dtype=float))
    if d.min(initial=0) < 0 or d.max(initial=0) > 65535:
        raise ValueError("depth must fit in 16 bits of millimeters")
    atomic_write(path, _png_bytes(Image.fromarray(d.astype(np.uint16))))


def read_depth_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.array(im)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    if arr.ndim != 2:
        raise IngestionError(f"{path}: depth image must be single-channel")
    return arr.astype(np.uint16)


def write_color_png(path, color: np.ndarray) -> None:
    atomic_write(path, _png_bytes(Image.fromarray(np.asarray(color, dtype=np.uint8), mode="RGB")))


def read_color_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.array(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    return arr


def write_intrinsics(path, intr: CameraIntrinsics) -> None:
    atomic_write(path, dump_json(intr.to_dict()))


def read_intrinsics(path) -> CameraIntrinsics:
    data = _load_json(path)
    try:
        return CameraIntrinsics.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestionError(f"{path}: bad intrinsics: {exc}") from exc


FRAME_COLOR = "frame_{:04d}_color.png"
FRAME_DEPTH = "frame_{:04d}_depth.png"


def write_frames(out_dir, frames) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = list(frames)
    if frames:
        write_intrinsics(out / "intrinsics.json", frames[0].intrinsics)
    for k, f in enumerate(frames):
        write_color_png(out / FRAME_COLOR.format(k), f.color)
        write_depth_png(out / FRAME_DEPTH.format(k), f.depth)


def read_frames(frames_dir) -> list[RGBDFrame]:
    """Load frame_NNNN_{color,depth}.png pairs in index order."""
    d = Path(frames_dir)
    if not d.is_dir():
        raise IngestionError(f"{d}: not a directory")
    intr = read_intrinsics(d / "intrinsics.json")
    depth_files = sorted(d.glob("frame_*_depth.png"))
    frames = []
    for k, dp in enumerate(depth_files):
        idx = int(dp.name.split("_")[1])
        cp = d / FRAME_COLOR.format(idx)
        depth = read_depth_png(dp)
        color = read_color_png(cp) if cp.exists() else np.zeros(depth.shape + (3,), np.uint8)
        if depth.shape != (intr.height, intr.width) or color.shape[:2] != depth.shape:
            raise IngestionError(f"{dp}: size does not match intrinsics.json")
        frames.append(RGBDFrame(color, depth, intr, idx))
    return frames


# ---- scenes ------------------------------------------------------------------

def scene_to_dict(scene: PrimitiveScene) -> dict:
    return {
        "spheres": [{"center": s.center.tolist(), "radius": float(s.radius), "role": s.role}
                    for s in scene.spheres],
        "capsules": [{"a": c.a.tolist(), "b": c.b.tolist(), "radius": float(c.radius)}
                     for c in scene.capsules],
    }


def scene_from_dict(data: dict, margin: float = 0.0) -> PrimitiveScene:
    try:
        spheres = [SpherePrimitive(s["center"], s["radius"], role=s.get("role", "target"))
                   for s in data.get("spheres", [])]
        capsules = [CapsulePrimitive(c["a"], c["b"], c["radius"]) for c in data.get("capsules", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestionError(f"bad scene description: {exc}") from exc
    return PrimitiveScene(spheres, capsules, margin)


def write_scene(path, scene: PrimitiveScene) -> None:
    atomic_write(path, dump_json(scene_to_dict(scene)))


def read_scene(path, margin: float = 0.0) -> PrimitiveScene:
    try:
        return scene_from_dict(_load_json(path), margin)
    except IngestionError as exc:
        raise IngestionError(f"{path}: {exc}") from exc


# ---- meshes ------------------------------------------------------------------

def off_text(mesh: TriangleMesh) -> str:
    lines = ["OFF", f"{len(mesh.vertices)} {mesh.n_faces} 0"]
    lines += [" ".join(repr(float(x)) for x in v) for v in mesh.vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    return "\n".join(lines) + "\n"


def write_off(path, mesh: TriangleMesh) -> None:
    atomic_write(path, off_text(mesh))


def read_off(path) -> TriangleMesh:
    try:
        tokens = Path(path).read_text().split()
        if tokens[0] != "OFF":
            raise ValueError("missing OFF magic")
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4
        verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
        pos += 3 * nv
        faces = []
        for _ in range(nf):
            k = int(tokens[pos])
            if k != 3:
                raise ValueError("only triangular faces are supported")
            faces.append([int(t) for t in tokens[pos + 1:pos + 4]])
            pos += 4
        return TriangleMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))
    except (OSError, IndexError, ValueError) as exc:
        raise IngestionError(f"{path}: {exc}") from exc


def stl_bytes(mesh: TriangleMesh) -> bytes:
    tri = mesh.vertices[mesh.faces]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norm = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.divide(normals, norm, out=np.zeros_like(normals), where=norm > 0)
    rec = np.zeros(mesh.n_faces, dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec["n"] = normals
    rec["v"] = tri
    header = b"croprow binary STL".ljust(80, b"\0")
    return header + np.uint32(mesh.n_faces).tobytes() + rec.tobytes()


def write_stl(path, mesh: TriangleMesh) -> None:
    atomic_write(path, stl_bytes(mesh))


# ---- registration reports ------------------------------------------------------

def _matrix_rows(t: RigidTransform) -> list:
    return t.as_matrix().tolist()


def report_to_dict(report, seed: int | None = None) -> dict:
    out = {
        "frame_indices": list(map(int, report.frame_indices)),
        "poses": [_matrix_rows(p) for p in report.poses],
        "skipped": list(map(int, report.skipped)),
        "pair_fitness": [float(f) for f in report.pair_fitness],
        "failures": {str(k): v for k, v in report.failures.items()},
    }
    if seed is not None:
        out["seed"] = seed
    return out


def pose_from_matrix(rows) -> RigidTransform:
    return RigidTransform.from_matrix(np.asarray(rows, dtype=float))


__all__ = [
    "FRAME_COLOR", "FRAME_DEPTH", "atomic_write", "dump_json", "off_text", "ply_bytes",
    "pose_from_matrix", "read_color_png", "read_depth_png", "read_frames", "read_intrinsics",
    "read_off", "read_ply", "read_scene", "report_to_dict", "scene_from_dict", "scene_to_dict",
    "stl_bytes", "write_color_png", "write_depth_png", "write_frames", "write_intrinsics",
    "write_off", "write_ply", "write_scene", "write_stl",
]
