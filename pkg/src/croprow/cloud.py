"""Point clouds, RGB-D frames and the filtering operations on them.

Depth images are plain ``(H, W)`` arrays in millimeters where 0 means
"no reading"; masks are ``(H, W)`` boolean arrays.  Everything downstream
of deprojection works in meters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyForeground
from .geometry import RigidTransform


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> CameraIntrinsics:
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            cols = np.array(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(cols) != len(pts):
                raise ValueError("colors and points differ in length")
            cols.setflags(write=False)
            object.__setattr__(self, "colors", cols)

    def __len__(self):
        return len(self.points)

    def select(self, index) -> PointCloud:
        """Subset by boolean mask or integer index array, order preserved."""
        cols = None if self.colors is None else self.colors[index]
        return PointCloud(self.points[index], cols)

    @staticmethod
    def concatenate(clouds) -> PointCloud:
        clouds = list(clouds)
        if not clouds:
            return PointCloud(np.zeros((0, 3)))
        pts = np.concatenate([c.points for c in clouds])
        if all(c.colors is not None for c in clouds):
            cols = np.concatenate([c.colors for c in clouds])
        else:
            cols = None
        return PointCloud(pts, cols)


@dataclass(frozen=True, eq=False)
class RGBDFrame:
    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) millimeters, 0 = invalid
    intrinsics: CameraIntrinsics
    index: int = 0

    def __post_init__(self):
        depth = np.asarray(self.depth)
        color = np.asarray(self.color)
        if depth.ndim != 2 or color.shape[:2] != depth.shape:
            raise ValueError("color and depth must share width and height")
        if depth.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError("image size disagrees with intrinsics")
        if np.any(depth < 0):
            raise ValueError("depth values must be non-negative")


def foreground_mask(depth: np.ndarray, cutoff: float) -> np.ndarray:
    """True where the depth reading is valid and no farther than ``cutoff`` meters."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    depth = np.asarray(depth)
    return (depth > 0) & (depth / 1000.0 <= cutoff)


def pixel_rays(intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel normalized image coordinates ((u-cx)/fx, (v-cy)/fy)."""
    u = np.arange(intr.width, dtype=float)
    v = np.arange(intr.height, dtype=float)
    return (u[None, :] - intr.cx) / intr.fx, (v[:, None] - intr.cy) / intr.fy


def xyz_map(frame: RGBDFrame) -> np.ndarray:
    """(H, W, 3) camera-frame coordinates of every pixel; invalid pixels get z = 0."""
    z = np.asarray(frame.depth, dtype=float) / 1000.0
    xn, yn = pixel_rays(frame.intrinsics)
    return np.stack([xn * z, yn * z, z], axis=-1)


def deproject(frame: RGBDFrame, cutoff: float) -> PointCloud:
    """Back-project every foreground pixel through the pinhole model."""
    mask = foreground_mask(frame.depth, cutoff)
    if not mask.any():
        raise EmptyForeground(f"frame {frame.index}: no pixel within {cutoff} m")
    xyz = xyz_map(frame)[mask]
    return PointCloud(xyz, np.asarray(frame.color, dtype=np.uint8)[mask])


def project(points, intr: CameraIntrinsics) -> np.ndarray:
    """Pixel coordinates (u, v) of camera-frame points with z > 0."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    u = intr.fx * p[:, 0] / p[:, 2] + intr.cx
    v = intr.fy * p[:, 1] / p[:, 2] + intr.cy
    return np.stack([u, v], axis=1)


def transform_cloud(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    return PointCloud(t.apply(cloud.points), cloud.colors)


def neighbor_counts(points: np.ndarray, radius: float) -> np.ndarray:
    """Number of *other* points strictly closer than ``radius`` to each point.

    Counts come from the k-d tree at radii just inside and just outside
    ``radius``; only points whose two counts differ are recounted with an
    explicit squared-distance test, so results match a brute-force count.
    """
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=int)
    tree = cKDTree(points)
    inner = tree.query_ball_point(points, r=radius * (1 - 1e-9), return_length=True) - 1
    outer = tree.query_ball_point(points, r=radius * (1 + 1e-9), return_length=True) - 1
    counts = inner.astype(int)
    for i in np.nonzero(inner != outer)[0]:
        cand = np.asarray(tree.query_ball_point(points[i], r=radius * (1 + 1e-9)), dtype=np.int64)
        cand = cand[cand != i]
        diff = points[cand] - points[i]
        counts[i] = int(np.count_nonzero((diff * diff).sum(axis=1) < radius * radius))
    return counts


def radius_outlier_removal(cloud: PointCloud, radius: float, min_neighbors: int) -> PointCloud:
    """Keep points having at least ``min_neighbors`` others strictly within ``radius``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if min_neighbors < 1:
        raise ValueError("min_neighbors must be at least 1")
    if len(cloud) == 0:
        return cloud
    return cloud.select(neighbor_counts(cloud.points, radius) >= min_neighbors)


def default_outlier_radius(cloud: PointCloud, sample: int = 1000, seed: int = 0) -> float:
    """Twice the median nearest-neighbor spacing, estimated on a random sample."""
    if len(cloud) < 2:
        raise ValueError("need at least two points to estimate spacing")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(cloud), size=min(sample, len(cloud)), replace=False)
    dist, _ = cKDTree(cloud.points).query(cloud.points[idx], k=2)
    return 2.0 * float(np.median(dist[:, 1]))


def _voxel_labels(points: np.ndarray, edge: float) -> tuple[np.ndarray, int]:
    cells = np.floor((points - points.min(axis=0)) / edge).astype(np.int64)
    dims = cells.max(axis=0) + 1
    if float(dims[0]) * float(dims[1]) * float(dims[2]) < 2.0**62:
        key = (cells[:, 0] * dims[1] + cells[:, 1]) * dims[2] + cells[:, 2]
        _, labels = np.unique(key, return_inverse=True)
    else:
        _, labels = np.unique(cells, axis=0, return_inverse=True)
    return labels.reshape(-1), int(labels.max()) + 1


def voxel_downsample(cloud: PointCloud, edge: float) -> PointCloud:
    """Replace each occupied voxel's members by their centroid (and mean color)."""
    if len(cloud) == 0:
        return cloud
    labels, n = _voxel_labels(cloud.points, edge)
    counts = np.bincount(labels, minlength=n).astype(float)
    pts = np.stack([np.bincount(labels, cloud.points[:, k], n) for k in range(3)], axis=1)
    pts /= counts[:, None]
    cols = None
    if cloud.colors is not None:
        c = cloud.colors.astype(float)
        cols = np.stack([np.bincount(labels, c[:, k], n) for k in range(3)], axis=1)
        cols = np.rint(cols / counts[:, None]).astype(np.uint8)
    return PointCloud(pts, cols)


def simplify_cloud(cloud: PointCloud, target_points: int, max_bisections: int = 60) -> PointCloud:
    """Voxel-grid downsample to between ``target_points`` and 1.1x that count.

    The voxel edge is found by bisection on the occupied-voxel count.  Clouds
    already at or below the target are returned unchanged.
    """
    if target_points < 1:
        raise ValueError("target_points must be at least 1")
    n = len(cloud)
    if n <= target_points:
        return cloud
    upper = int(np.floor(1.10 * target_points))
    pts = cloud.points
    extent = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if extent == 0.0:
        return voxel_downsample(cloud, 1.0)

    def count(edge):
        return _voxel_labels(pts, edge)[1]

    lo, hi = 0.0, 2.0 * extent  # count(lo) ~ n > upper, count(hi) == 1
    best = None
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        c = count(mid)
        if target_points <= c <= upper:
            best = mid
            break
        if c > upper:
            lo = mid
        else:
            hi = mid
    if best is None:
        # count jumped over the bracket; prefer the smallest count above target
        best = lo if lo > 0 else hi
    return voxel_downsample(cloud, best)
