"""Occupancy-grid meshing and vertex-clustering decimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage.measure import marching_cubes

from .cloud import PointCloud
from .errors import EmptyCloud


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if len(f) and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("degenerate face")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def boundary_edge_count(self) -> int:
        """Edges used by an odd number of faces; zero for a closed surface."""
        if not len(self.faces):
            return 0
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return int(np.count_nonzero(counts % 2))


def _merge_vertices(vertices: np.ndarray, faces: np.ndarray, tol: float = 1e-9):
    key = np.round(vertices / tol).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    new_faces = inverse[faces]
    return vertices[first], new_faces


def _clean_faces(faces: np.ndarray) -> np.ndarray:
    ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces = faces[ok]
    if not len(faces):
        return faces
    # drop repeated triangles regardless of winding
    _, keep = np.unique(np.sort(faces, axis=1), axis=0, return_index=True)
    return faces[np.sort(keep)]


def mesh_from_cloud(cloud: PointCloud, voxel_size: float) -> TriangleMesh:
    """Marching-cubes surface of the cloud's voxel occupancy.

    Voxel centers carry occupancy 1 (occupied) or 0, the grid is padded
    with empty cells, and the iso-surface is extracted at level 0.5, so
    every vertex sits halfway between an occupied and an empty voxel
    center.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot mesh an empty cloud")
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    pts = cloud.points
    origin = pts.min(axis=0)
    cells = np.floor((pts - origin) / voxel_size).astype(np.int64)
    dims = cells.max(axis=0) + 1
    grid = np.zeros(tuple(dims + 2), dtype=np.float32)
    grid[cells[:, 0] + 1, cells[:, 1] + 1, cells[:, 2] + 1] = 1.0
    verts, faces, _, _ = marching_cubes(grid, level=0.5, spacing=(voxel_size,) * 3,
                                        allow_degenerate=False)
    # grid index i (after padding) is the center of voxel i-1
    verts = verts.astype(float) + origin + voxel_size * (0.5 - 1.0)
    verts, faces = _merge_vertices(verts, faces.astype(np.int64))
    faces = _clean_faces(faces)
    used = np.unique(faces)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(verts[used], remap[faces])


def _cluster(mesh: TriangleMesh, cell: float) -> TriangleMesh:
    v = mesh.vertices
    keys = np.floor((v - v.min(axis=0)) / cell).astype(np.int64)
    _, labels = np.unique(keys, axis=0, return_inverse=True)
    labels = labels.reshape(-1)
    n = labels.max() + 1
    counts = np.bincount(labels, minlength=n).astype(float)
    mean = np.stack([np.bincount(labels, v[:, k], n) for k in range(3)], axis=1) / counts[:, None]
    # representative = member vertex nearest the cluster mean, so output
    # vertices stay on the input surface
    d = ((v - mean[labels]) ** 2).sum(axis=1)
    order = np.lexsort((d, labels))
    first = order[np.r_[0, np.nonzero(np.diff(labels[order]))[0] + 1]]
    reps = v[first]
    faces = _clean_faces(labels[mesh.faces])
    if not len(faces):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    used = np.unique(faces)
    remap = np.full(n, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(reps[used], remap[faces])


def decimate_mesh(mesh: TriangleMesh, target_faces: int, max_bisections: int = 50) -> TriangleMesh:
    """Vertex-clustering decimation down to at most ``target_faces`` faces.

    The cluster cell size is bisected between a size that leaves too many
    faces and one that leaves few enough, keeping the finest clustering
    seen with between 1 and ``target_faces`` faces.  Face count is not
    strictly monotone in cell size; if no probed size lands in that range
    the coarsest non-empty clustering probed is returned instead.
    """
    if target_faces < 4:
        raise ValueError("target_faces must be at least 4")
    if mesh.n_faces <= target_faces:
        return mesh
    extent = float(np.linalg.norm(np.ptp(mesh.vertices, axis=0)))
    best = None  # (cell, mesh) with 0 < faces <= target, smallest cell
    coarsest = mesh  # fewest faces seen among non-empty results above the target

    def probe(cell):
        nonlocal best, coarsest
        out = _cluster(mesh, cell)
        if 0 < out.n_faces <= target_faces:
            if best is None or cell < best[0]:
                best = (cell, out)
        elif out.n_faces > target_faces and out.n_faces < coarsest.n_faces:
            coarsest = out
        return out.n_faces

    lo, hi = 0.0, extent
    while probe(hi) > target_faces:
        lo, hi = hi, 2.0 * hi
    for _ in range(max_bisections):
        if hi - lo < 1e-4 * extent:
            break
        mid = 0.5 * (lo + hi)
        if probe(mid) > target_faces:
            lo = mid
        else:
            hi = mid
    return best[1] if best is not None else coarsest


def uv_sphere(radius: float, n_lat: int, n_lon: int, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed latitude/longitude sphere mesh with 2 * n_lon * (n_lat - 1) faces."""
    c = np.asarray(center, dtype=float)
    theta = np.linspace(0.0, np.pi, n_lat + 1)[1:-1]
    phi = np.linspace(0.0, 2 * np.pi, n_lon, endpoint=False)
    t, p = np.meshgrid(theta, phi, indexing="ij")
    ring = np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1).reshape(-1, 3)
    verts = np.vstack([[0.0, 0.0, 1.0], ring, [0.0, 0.0, -1.0]]) * radius + c
    top, bottom = 0, len(verts) - 1
    faces = []
    idx = lambda i, j: 1 + i * n_lon + (j % n_lon)  # noqa: E731
    for j in range(n_lon):
        faces.append((top, idx(0, j), idx(0, j + 1)))
        faces.append((bottom, idx(n_lat - 2, j + 1), idx(n_lat - 2, j)))
    for i in range(n_lat - 2):
        for j in range(n_lon):
            a, b, c2, d = idx(i, j), idx(i, j + 1), idx(i + 1, j), idx(i + 1, j + 1)
            faces.append((a, c2, b))
            faces.append((b, c2, d))
    return TriangleMesh(verts, np.array(faces))
