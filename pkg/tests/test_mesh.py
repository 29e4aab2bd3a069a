import numpy as np
import pytest
from scipy.spatial import cKDTree

from croprow.cloud import PointCloud
from croprow.errors import EmptyCloud
from croprow.mesh import TriangleMesh, decimate_mesh, mesh_from_cloud, uv_sphere


def cube_surface(rng, n=60_000, side=0.1):
    pts = rng.uniform(0, side, (n, 3))
    face = rng.integers(0, 3, n)
    pts[np.arange(n), face] = rng.integers(0, 2, n) * side
    return pts


def cube_surface_distance(p, side=0.1):
    inside = np.all((p >= 0) & (p <= side), axis=1)
    outside = np.linalg.norm(np.maximum(0, np.maximum(-p, p - side)), axis=1)
    to_face = np.minimum(p, side - p).min(axis=1)
    return np.where(inside, to_face, outside)


def test_cube_mesh_hugs_surface(rng):
    pts = cube_surface(rng)
    mesh = mesh_from_cloud(PointCloud(pts), 0.01)
    assert mesh.n_faces > 0
    assert mesh.boundary_edge_count() == 0
    assert cube_surface_distance(mesh.vertices).max() <= 0.02


def test_vertices_near_input(rng):
    pts = rng.normal(0, 0.05, (3000, 3))
    voxel = 0.01
    mesh = mesh_from_cloud(PointCloud(pts), voxel)
    d, _ = cKDTree(pts).query(mesh.vertices)
    assert d.max() <= 2 * voxel


def test_single_point_gives_closed_cell():
    mesh = mesh_from_cloud(PointCloud(np.array([[0.3, 0.2, 0.1]])), 0.01)
    assert mesh.boundary_edge_count() == 0
    # iso-level 0.5 around one occupied cell is the octahedron through its face neighbors' midpoints
    assert len(mesh.vertices) == 6 and mesh.n_faces == 8
    assert np.linalg.norm(mesh.vertices - [0.3, 0.2, 0.1], axis=1).max() <= 0.01 * np.sqrt(3)


def test_empty_cloud_raises():
    with pytest.raises(EmptyCloud):
        mesh_from_cloud(PointCloud(np.zeros((0, 3))), 0.01)
    with pytest.raises(ValueError):
        mesh_from_cloud(PointCloud(np.zeros((1, 3))), 0.0)


def test_mesh_rejects_bad_faces():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 1]])


def test_uv_sphere_face_count():
    m = uv_sphere(1.0, 10, 12)
    assert m.n_faces == 2 * 12 * 9
    assert m.boundary_edge_count() == 0
    assert np.allclose(np.linalg.norm(m.vertices, axis=1), 1.0)


def test_decimate_sphere():
    mesh = uv_sphere(0.05, 100, 101, center=(1, 2, 3))
    out = decimate_mesh(mesh, 2000)
    assert 0 < out.n_faces <= 2000
    r = np.linalg.norm(out.vertices - [1, 2, 3], axis=1)
    assert np.abs(r - 0.05).max() <= 0.05 * 0.05
    f = out.faces
    assert np.all((f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2]))


@pytest.mark.parametrize("target", [4, 50, 500, 5000, 50_000])
def test_decimate_monotone(target):
    mesh = uv_sphere(1.0, 40, 40)
    out = decimate_mesh(mesh, target)
    assert out.n_faces <= max(mesh.n_faces, target)
    assert out.n_faces > 0


def test_small_mesh_unchanged():
    mesh = uv_sphere(1.0, 5, 10)
    assert mesh.n_faces == 80
    assert decimate_mesh(mesh, 200) is mesh


def test_tetrahedron_unchanged():
    tet = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float),
                       [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    assert decimate_mesh(tet, 4) is tet


def test_decimate_validates_target():
    with pytest.raises(ValueError):
        decimate_mesh(uv_sphere(1.0, 5, 5), 3)
