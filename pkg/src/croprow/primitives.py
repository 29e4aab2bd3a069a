"""RANSAC sphere and capsule fitting, and greedy multi-model scene extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .cloud import PointCloud, default_outlier_radius
from .errors import DegenerateSamples, EmptyScene, NoModel
from .scene import OBSTACLE, TARGET, CapsulePrimitive, PrimitiveScene, SpherePrimitive


def _points(cloud) -> np.ndarray:
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)


def circumsphere(quad: np.ndarray) -> tuple[np.ndarray, float]:
    """Sphere through four non-coplanar points (rows of ``quad``)."""
    a = np.hstack([2.0 * quad, np.ones((4, 1))])
    b = (quad * quad).sum(axis=1)
    sol = np.linalg.solve(a, b)
    center = sol[:3]
    return center, float(np.sqrt(sol[3] + center @ center))


def _algebraic_sphere(pts: np.ndarray) -> tuple[np.ndarray, float]:
    a = np.hstack([2.0 * pts, np.ones((len(pts), 1))])
    b = (pts * pts).sum(axis=1)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    center = sol[:3]
    return center, float(np.sqrt(max(sol[3] + center @ center, 0.0)))


def _refine_sphere(pts: np.ndarray, center: np.ndarray, radius: float) -> tuple[np.ndarray, float]:
    def resid(x):
        return np.linalg.norm(pts - x[:3], axis=1) - x[3]

    sol = least_squares(resid, np.r_[center, radius], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return sol.x[:3], float(abs(sol.x[3]))


def fit_sphere_ransac(cloud, distance_tol: float, iterations: int = 500, seed: int = 0,
                      max_radius: float = np.inf) -> SpherePrimitive:
    """RANSAC sphere: circumspheres of random 4-point samples, scored by inlier count.

    The best hypothesis is refined by least squares on its inliers.  The
    result is a function of the inputs and ``seed`` only.
    """
    pts = _points(cloud)
    if len(pts) < 4:
        raise ValueError("sphere fitting needs at least 4 points")
    if distance_tol <= 0:
        raise ValueError("distance_tol must be positive")
    rng = np.random.default_rng(seed)
    scale = float(np.ptp(pts, axis=0).max()) or 1.0
    best_count, best = -1, None
    degenerate = 0
    for _ in range(iterations):
        quad = pts[rng.choice(len(pts), 4, replace=False)]
        vol = abs(np.linalg.det(quad[1:] - quad[0]))
        if vol <= 1e-12 * scale ** 3:
            degenerate += 1
            continue
        center, radius = circumsphere(quad)
        if not np.isfinite(radius) or radius <= 0:
            degenerate += 1
            continue
        if radius > max_radius:
            continue
        count = int(np.count_nonzero(np.abs(np.linalg.norm(pts - center, axis=1) - radius) <= distance_tol))
        if count > best_count:
            best_count, best = count, (center, radius)
    if best is None:
        raise DegenerateSamples("no non-coplanar 4-point sample found")
    if best_count < 4:
        raise NoModel(f"best sphere has only {best_count} inliers")
    center, radius = best
    inliers = np.abs(np.linalg.norm(pts - center, axis=1) - radius) <= distance_tol
    center, radius = _algebraic_sphere(pts[inliers])
    center, radius = _refine_sphere(pts[inliers], center, radius)
    inliers = np.abs(np.linalg.norm(pts - center, axis=1) - radius) <= distance_tol
    return SpherePrimitive(center, radius, int(inliers.sum()))


def sphere_inliers(pts: np.ndarray, sphere: SpherePrimitive, tol: float) -> np.ndarray:
    return np.abs(np.linalg.norm(pts - sphere.center, axis=1) - sphere.radius) <= tol


def _axis_distance(pts, point, direction):
    w = pts - point
    return np.linalg.norm(w - np.outer(w @ direction, direction), axis=1)


def _perp_basis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(d, e1)


def _circle_2d(xy: np.ndarray):
    """Algebraic circle through/fit to 2-D points; None when degenerate."""
    a = np.hstack([2.0 * xy, np.ones((len(xy), 1))])
    b = (xy * xy).sum(axis=1)
    if len(xy) == 3:
        if abs(np.linalg.det(a)) < 1e-18:
            return None
        sol = np.linalg.solve(a, b)
    else:
        sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    c = sol[:2]
    r2 = sol[2] + c @ c
    if not np.isfinite(r2) or r2 <= 0:
        return None
    return c, float(np.sqrt(r2))


def _refine_cylinder(pts, point, direction, radius):
    e1, e2 = _perp_basis(direction)

    def unpack(x):
        d = direction + x[0] * e1 + x[1] * e2
        d = d / np.linalg.norm(d)
        p = point + x[2] * e1 + x[3] * e2
        return p, d

    def resid(x):
        p, d = unpack(x)
        return _axis_distance(pts, p, d) - x[4]

    sol = least_squares(resid, np.array([0.0, 0.0, 0.0, 0.0, radius]), method="lm",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    p, d = unpack(sol.x)
    return p, d, float(abs(sol.x[4]))


def _refit_cylinder(sub, point, d, radius):
    centroid = sub.mean(axis=0)
    _, _, vt = np.linalg.svd(sub - centroid, full_matrices=False)
    d_pca = vt[0] if vt[0] @ d >= 0 else -vt[0]
    # the principal direction is only trustworthy for elongated inlier sets
    if np.ptp((sub - centroid) @ d_pca) > 4.0 * radius:
        d = d_pca
    e1, e2 = _perp_basis(d)
    circ = _circle_2d((sub - centroid) @ np.stack([e1, e2], axis=1))
    if circ is not None:
        point = centroid + circ[0][0] * e1 + circ[0][1] * e2
    radius = float(_axis_distance(sub, point, d).mean())
    if len(sub) >= 6:
        point, d, radius = _refine_cylinder(sub, point, d, radius)
    return point, d, radius


def fit_cylinder_ransac(cloud, distance_tol: float, iterations: int = 500, seed: int = 0,
                        refine_rounds: int = 4, max_radius: float = np.inf) -> CapsulePrimitive:
    """RANSAC cylinder returned as a capsule spanning the inliers' axial extent.

    Each hypothesis takes its axis direction from the difference of two
    sampled points and its cross-section circle from three more points
    projected onto the plane normal to that direction.  The winner is
    refined: direction from the inliers' principal axis, center from a
    circle fit of their projections, radius as the mean axial distance,
    then a joint least-squares polish of axis and radius.  Refit and
    inlier selection alternate for up to ``refine_rounds`` rounds.
    """
    pts = _points(cloud)
    if len(pts) < 6:
        raise ValueError("cylinder fitting needs at least 6 points")
    if distance_tol <= 0:
        raise ValueError("distance_tol must be positive")
    rng = np.random.default_rng(seed)
    best_count, best = -1, None
    for _ in range(iterations):
        idx = rng.choice(len(pts), 5, replace=False)
        d = pts[idx[1]] - pts[idx[0]]
        n = np.linalg.norm(d)
        if n == 0:
            continue
        d /= n
        e1, e2 = _perp_basis(d)
        proj = pts[idx[2:]] @ np.stack([e1, e2], axis=1)
        circ = _circle_2d(proj)
        if circ is None:
            continue
        c2, radius = circ
        if radius > max_radius:
            continue
        point = c2[0] * e1 + c2[1] * e2
        count = int(np.count_nonzero(np.abs(_axis_distance(pts, point, d) - radius) <= distance_tol))
        if count > best_count:
            best_count, best = count, (point, d, radius)
    if best is None or best_count < 6:
        raise NoModel(f"best cylinder has only {max(best_count, 0)} inliers")

    point, d, radius = best
    inl = np.abs(_axis_distance(pts, point, d) - radius) <= distance_tol
    # alternate refit and inlier re-selection so the set can grow along the axis
    for _ in range(refine_rounds):
        point, d, radius = _refit_cylinder(pts[inl], point, d, radius)
        new = np.abs(_axis_distance(pts, point, d) - radius) <= distance_tol
        if new.sum() < 6 or np.array_equal(new, inl):
            inl = new
            break
        inl = new
    if inl.sum() < 6:
        raise NoModel("cylinder lost its inliers during refinement")
    t = (pts[inl] - point) @ d
    a, b = point + t.min() * d, point + t.max() * d
    if np.array_equal(a, b):
        raise NoModel("cylinder inliers have no axial extent")
    return CapsulePrimitive(a, b, radius, int(inl.sum()))


def capsule_inliers(pts: np.ndarray, capsule: CapsulePrimitive, tol: float) -> np.ndarray:
    """Points near the capsule's cylindrical surface within its axial span."""
    d = capsule.axis
    t = (pts - capsule.a) @ d
    within = (t >= -tol) & (t <= capsule.length + tol)
    return within & (np.abs(_axis_distance(pts, capsule.a, d) - capsule.radius) <= tol)


@dataclass(frozen=True)
class ExtractionParams:
    distance_tol: float = 0.003
    iterations: int = 400
    min_fraction: float = 0.1
    min_points: int = 30
    cluster_distance: float | None = None  # None: 3x the default outlier radius of the cloud
    max_sphere_radius: float = 0.15
    max_capsule_radius: float = 0.10
    seed: int = 0


def euclidean_clusters(points: np.ndarray, distance: float) -> list[np.ndarray]:
    """Connected components of the graph linking points closer than ``distance``."""
    n = len(points)
    if n == 0:
        return []
    pairs = cKDTree(points).query_pairs(distance, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    n_comp, labels = connected_components(graph, directed=False)
    clusters = [np.nonzero(labels == c)[0] for c in range(n_comp)]
    clusters.sort(key=lambda c: (-len(c), int(c[0])))
    return clusters


def _fit_both(pts, params: ExtractionParams, seed: int):
    candidates = []
    try:
        s = fit_sphere_ransac(pts, params.distance_tol, params.iterations, seed, params.max_sphere_radius)
        if s.radius <= params.max_sphere_radius:
            candidates.append((s.inlier_count, 1, s))
    except (NoModel, DegenerateSamples):
        pass
    if len(pts) >= 6:
        try:
            c = fit_cylinder_ransac(pts, params.distance_tol, params.iterations, seed,
                                    max_radius=params.max_capsule_radius)
            if c.radius <= params.max_capsule_radius:
                candidates.append((c.inlier_count, 0, c))
        except NoModel:
            pass
    if not candidates:
        return None
    # more inliers wins; ties go to the sphere
    return max(candidates, key=lambda x: (x[0], x[1]))[2]


def extract_primitives(cloud: PointCloud, params: ExtractionParams = ExtractionParams()) -> PrimitiveScene:
    """Greedy per-cluster RANSAC decomposition into spheres (targets) and capsules.

    Within each Euclidean cluster, sphere and cylinder models compete; the
    one with more inliers is kept if it explains at least ``min_fraction``
    of the cluster's remaining points, its inliers are removed and the
    search repeats.  Leftover points are discarded.
    """
    pts = _points(cloud)
    if len(pts) == 0:
        raise ValueError("cloud is empty")
    link = params.cluster_distance
    if link is None:
        link = 3.0 * default_outlier_radius(PointCloud(pts)) if len(pts) > 1 else 1.0
    spheres, capsules = [], []
    for ci, members in enumerate(euclidean_clusters(pts, link)):
        remaining = pts[members]
        attempt = 0
        while len(remaining) >= max(params.min_points, 4):
            model = _fit_both(remaining, params, params.seed + 1000 * ci + attempt)
            attempt += 1
            if model is None:
                break
            if isinstance(model, SpherePrimitive):
                inl = sphere_inliers(remaining, model, params.distance_tol)
            else:
                inl = capsule_inliers(remaining, model, params.distance_tol)
            if inl.sum() < params.min_fraction * len(remaining) or inl.sum() < params.min_points:
                break
            if isinstance(model, SpherePrimitive):
                spheres.append(SpherePrimitive(model.center, model.radius, int(inl.sum()), TARGET))
            else:
                capsules.append(CapsulePrimitive(model.a, model.b, model.radius, int(inl.sum())))
            remaining = remaining[~inl]
    if not spheres and not capsules:
        raise EmptyScene("no primitive explains enough points")
    return PrimitiveScene(spheres, capsules)


__all__ = [
    "ExtractionParams", "OBSTACLE", "TARGET", "capsule_inliers", "circumsphere",
    "euclidean_clusters", "extract_primitives", "fit_cylinder_ransac", "fit_sphere_ransac",
    "sphere_inliers",
]
