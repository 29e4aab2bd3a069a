"""Exact ray-cast rendering of primitive scenes into RGB-D frames.

Stands in for the greenhouse capture: a camera walks along the row at a
fixed stand-off and every pixel's depth is the nearest ray/primitive hit.
"""

from __future__ import annotations

import numpy as np

from .cloud import CameraIntrinsics, RGBDFrame, pixel_rays
from .geometry import RigidTransform
from .scene import CapsulePrimitive, PrimitiveScene, SpherePrimitive

SPHERE_COLOR = (200, 40, 30)
CAPSULE_COLOR = (60, 150, 50)

# camera axes expressed in the world frame: image x = world up (z),
# image y = along the row (world x), optical axis = toward the plants (world y)
ROW_CAMERA_ROTATION = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])

# portrait image: the long axis runs along the row so consecutive frames overlap widely
DEFAULT_INTRINSICS = CameraIntrinsics(fx=280.0, fy=280.0, cx=167.5, cy=279.5, width=336, height=560)


def row_trajectory(n_frames: int, step: float = 0.10, start=(0.0, 0.0, 0.0),
                   jitter: float = 0.0, jitter_angle: float = 0.0, seed: int = 0) -> list[RigidTransform]:
    """Camera-to-world poses for a walk along world +x.

    ``jitter``/``jitter_angle`` add small random position (m) and attitude
    (rad) perturbations, the tripod never being placed perfectly.
    """
    rng = np.random.default_rng(seed)
    poses = []
    for k in range(n_frames):
        pos = np.asarray(start, dtype=float) + np.array([k * step, 0.0, 0.0])
        rot = ROW_CAMERA_ROTATION
        if k > 0 and jitter > 0:
            pos = pos + rng.uniform(-jitter, jitter, 3)
        if k > 0 and jitter_angle > 0:
            axis = rng.normal(size=3)
            rot = RigidTransform.from_axis_angle(axis, rng.uniform(-jitter_angle, jitter_angle)).rotation @ rot
        poses.append(RigidTransform(rot, pos))
    return poses


def _ray_sphere(o, d, center, radius):
    w = o - center
    a = (d * d).sum(-1)
    b = 2.0 * (d @ w)
    c = w @ w - radius * radius
    disc = b * b - 4.0 * a * c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    lam = (-b - sq) / (2.0 * a)
    return np.where(hit & (lam > 0), lam, np.inf)


def _ray_cylinder(o, d, a_pt, b_pt, radius):
    axis = b_pt - a_pt
    length = np.linalg.norm(axis)
    u = axis / length
    w = o - a_pt
    d_perp = d - np.outer(d @ u, u)
    w_perp = w - (w @ u) * u
    qa = (d_perp * d_perp).sum(-1)
    qb = 2.0 * (d_perp @ w_perp)
    qc = w_perp @ w_perp - radius * radius
    disc = qb * qb - 4.0 * qa * qc
    hit = (disc >= 0) & (qa > 1e-18)
    sq = np.sqrt(np.where(hit, disc, 0.0))
    lam = (-qb - sq) / (2.0 * np.where(qa > 1e-18, qa, 1.0))
    h = w @ u + lam * (d @ u)
    ok = hit & (lam > 0) & (h >= 0) & (h <= length)
    return np.where(ok, lam, np.inf)


def render(scene: PrimitiveScene, pose: RigidTransform, intr: CameraIntrinsics = DEFAULT_INTRINSICS,
           index: int = 0) -> RGBDFrame:
    """Render depth (float millimeters, 0 = miss) and flat color from a camera pose."""
    xn, yn = pixel_rays(intr)
    dirs_cam = np.stack(np.broadcast_arrays(xn, yn, np.ones_like(xn)), axis=-1).reshape(-1, 3)
    # directions keep camera-z = 1, so the ray parameter equals depth
    dirs = dirs_cam @ pose.rotation.T
    origin = pose.translation
    depth = np.full(len(dirs), np.inf)
    color = np.zeros((len(dirs), 3), dtype=np.uint8)

    def paint(lam, rgb):
        closer = lam < depth
        depth[closer] = lam[closer]
        color[closer] = rgb

    for s in scene.spheres:
        paint(_ray_sphere(origin, dirs, s.center, s.radius), SPHERE_COLOR)
    for c in scene.capsules:
        lam = np.minimum(_ray_cylinder(origin, dirs, c.a, c.b, c.radius),
                         np.minimum(_ray_sphere(origin, dirs, c.a, c.radius),
                                    _ray_sphere(origin, dirs, c.b, c.radius)))
        paint(lam, CAPSULE_COLOR)

    depth_mm = np.where(np.isfinite(depth), depth * 1000.0, 0.0).reshape(intr.height, intr.width)
    return RGBDFrame(color.reshape(intr.height, intr.width, 3), depth_mm, intr, index)


def render_sequence(scene: PrimitiveScene, poses, intr: CameraIntrinsics = DEFAULT_INTRINSICS,
                    depth_noise: float = 0.0, seed: int = 0) -> list[RGBDFrame]:
    """Render every pose; ``depth_noise`` is a Gaussian sigma in meters."""
    rng = np.random.default_rng(seed)
    frames = []
    for k, pose in enumerate(poses):
        f = render(scene, pose, intr, k)
        if depth_noise > 0:
            valid = f.depth > 0
            noisy = f.depth + valid * rng.normal(0.0, depth_noise * 1000.0, f.depth.shape)
            f = RGBDFrame(f.color, np.where(valid, np.maximum(noisy, 0.0), 0.0), intr, k)
        frames.append(f)
    return frames


def relative_poses(poses) -> list[RigidTransform]:
    """Poses of every camera expressed in the first camera's frame."""
    inv0 = poses[0].inverse()
    return [inv0 @ p for p in poses]


def crop_row_scene(length: float = 1.9, standoff: float = 0.5, seed: int | None = None,
                   background: bool = True) -> PrimitiveScene:
    """Two fruit (target spheres) and three stems (capsules) along a row.

    The camera path is assumed to run along world +x from 0 to ``length``.
    Two long stems lean across the row in opposite directions and a third
    stands nearly upright, so every stretch of the row shows non-parallel
    structure; each fruit sits halfway along one half of the row.  A seed
    perturbs positions by a few millimeters.  Optional background fruit
    sits 0.5 m beyond the stems, past the usual depth cutoff.
    """
    rng = np.random.default_rng(seed)

    def jit(scale=0.01):
        return rng.uniform(-scale, scale, 3) if seed is not None else np.zeros(3)

    x0, x1 = -0.65, length + 0.65
    capsules = [
        CapsulePrimitive(np.array([x0, standoff, -0.28]) + jit(), np.array([x1, standoff, 0.26]) + jit(), 0.015),
        CapsulePrimitive(np.array([x0, standoff - 0.03, 0.25]) + jit(), np.array([x1, standoff - 0.03, -0.27]) + jit(), 0.012),
        CapsulePrimitive(np.array([0.53 * length, standoff + 0.02, -0.35]) + jit(),
                         np.array([0.63 * length, standoff + 0.02, 0.35]) + jit(), 0.018),
    ]
    spheres = [
        SpherePrimitive(np.array([0.18 * length, standoff - 0.06, 0.12]) + jit(0.005), 0.04),
        SpherePrimitive(np.array([0.87 * length, standoff - 0.05, -0.10]) + jit(0.005), 0.04),
    ]
    if background:
        for j in range(3):
            spheres.append(SpherePrimitive((j * length / 2.0, standoff + 0.5, 0.0), 0.06, role="obstacle"))
    return PrimitiveScene(spheres, capsules)
