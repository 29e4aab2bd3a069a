"""Primitive collision world and capsule distance queries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TARGET = "target"
OBSTACLE = "obstacle"

_EPS = 1e-15


def _vec3(v) -> np.ndarray:
    a = np.array(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError("coordinates must be finite")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpherePrimitive:
    center: np.ndarray
    radius: float
    inlier_count: int = 0
    role: str = TARGET

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center))
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")
        if self.role not in (TARGET, OBSTACLE):
            raise ValueError(f"unknown sphere role {self.role!r}")


@dataclass(frozen=True, eq=False)
class CapsulePrimitive:
    a: np.ndarray
    b: np.ndarray
    radius: float
    inlier_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "a", _vec3(self.a))
        object.__setattr__(self, "b", _vec3(self.b))
        if not self.radius > 0:
            raise ValueError("capsule radius must be positive")
        if np.array_equal(self.a, self.b):
            raise ValueError("capsule endpoints must be distinct")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    @property
    def axis(self) -> np.ndarray:
        return (self.b - self.a) / self.length


@dataclass(frozen=True, eq=False)
class PrimitiveScene:
    spheres: tuple = ()
    capsules: tuple = ()
    margin: float = 0.0
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "spheres", tuple(self.spheres))
        object.__setattr__(self, "capsules", tuple(self.capsules))
        if self.margin < 0:
            raise ValueError("margin must be non-negative")

    @property
    def targets(self) -> list[int]:
        """Indices into ``spheres`` of the target-role spheres."""
        return [i for i, s in enumerate(self.spheres) if s.role == TARGET]

    def with_margin(self, margin: float) -> PrimitiveScene:
        return PrimitiveScene(self.spheres, self.capsules, margin)

    def arrays(self, ignore_targets: bool):
        """Stacked obstacle geometry: sphere (centers, radii, ids), capsule (a, b, radii)."""
        key = bool(ignore_targets)
        if key not in self._cache:
            ids = [i for i, s in enumerate(self.spheres) if not (ignore_targets and s.role == TARGET)]
            sc = np.array([self.spheres[i].center for i in ids]).reshape(-1, 3)
            sr = np.array([self.spheres[i].radius for i in ids], dtype=float)
            ca = np.array([c.a for c in self.capsules]).reshape(-1, 3)
            cb = np.array([c.b for c in self.capsules]).reshape(-1, 3)
            cr = np.array([c.radius for c in self.capsules], dtype=float)
            self._cache[key] = (sc, sr, np.array(ids, dtype=int), ca, cb, cr)
        return self._cache[key]

    def transformed(self, t) -> PrimitiveScene:
        """The same scene moved by a rigid transform."""
        spheres = [SpherePrimitive(t.apply(s.center), s.radius, s.inlier_count, s.role)
                   for s in self.spheres]
        capsules = [CapsulePrimitive(t.apply(c.a), t.apply(c.b), c.radius, c.inlier_count)
                    for c in self.capsules]
        return PrimitiveScene(spheres, capsules, self.margin)


def point_segment_distance(p, a, b) -> np.ndarray:
    """Broadcasting distance from points ``p`` to segments ``a``-``b``."""
    p, a, b = (np.asarray(x, dtype=float) for x in (p, a, b))
    d = b - a
    dd = (d * d).sum(-1)
    t = np.where(dd > _EPS, ((p - a) * d).sum(-1) / np.where(dd > _EPS, dd, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    diff = p - (a + t[..., None] * d)
    return np.sqrt((diff * diff).sum(-1))


def _segment_distance_batch(p1, q1, p2, q2) -> np.ndarray:
    # closest points of two segments (Ericson, Real-Time Collision Detection 5.1.9),
    # branch-free over broadcast arrays
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = (d1 * d1).sum(-1)
    e = (d2 * d2).sum(-1)
    f = (d2 * r).sum(-1)
    c = (d1 * r).sum(-1)
    b = (d1 * d2).sum(-1)
    a_ok = a > _EPS
    e_ok = e > _EPS
    a_safe = np.where(a_ok, a, 1.0)
    e_safe = np.where(e_ok, e, 1.0)
    denom = a * e - b * b

    s_gen = np.where(denom > _EPS * np.maximum(a * e, 1.0),
                     np.clip((b * f - c * e) / np.where(denom != 0, denom, 1.0), 0.0, 1.0), 0.0)
    t_gen = (b * s_gen + f) / e_safe
    s_lo = np.clip(-c / a_safe, 0.0, 1.0)
    s_hi = np.clip((b - c) / a_safe, 0.0, 1.0)
    s = np.where(t_gen < 0.0, s_lo, np.where(t_gen > 1.0, s_hi, s_gen))
    t = np.clip(t_gen, 0.0, 1.0)

    # degenerate segments
    s = np.where(a_ok & ~e_ok, s_lo, s)
    t = np.where(a_ok & ~e_ok, 0.0, t)
    s = np.where(~a_ok, 0.0, s)
    t = np.where(~a_ok & e_ok, np.clip(f / e_safe, 0.0, 1.0), t)
    t = np.where(~a_ok & ~e_ok, 0.0, t)

    c1 = p1 + s[..., None] * d1
    c2 = p2 + t[..., None] * d2
    diff = c1 - c2
    return np.sqrt((diff * diff).sum(-1))


def segment_segment_distance(a0, a1, b0, b1) -> float:
    """Exact minimum distance between segments a0-a1 and b0-b1.

    Zero-length segments are allowed.  The result is symmetric in the two
    segments bit-for-bit.
    """
    a0, a1, b0, b1 = (np.asarray(x, dtype=float) for x in (a0, a1, b0, b1))
    d_ab = _segment_distance_batch(a0, a1, b0, b1)
    d_ba = _segment_distance_batch(b0, b1, a0, a1)
    return float(min(d_ab, d_ba))


segment_distances = _segment_distance_batch


@dataclass(frozen=True)
class CollisionResult:
    free: bool
    link: int | None = None
    kind: str | None = None  # "sphere" or "capsule"
    obstacle: int | None = None
    penetration: float = 0.0

    def __bool__(self):
        return self.free


def clearances(seg_a: np.ndarray, seg_b: np.ndarray, radii: np.ndarray, scene: PrimitiveScene,
               ignore_targets: bool = True):
    """Surface clearances of link capsules against every obstacle.

    Returns ``(sphere_clearance (L, S), sphere_ids, capsule_clearance (L, C))``.
    """
    sc, sr, ids, ca, cb, cr = scene.arrays(ignore_targets)
    la = seg_a[:, None, :]
    lb = seg_b[:, None, :]
    if len(sc):
        ds = point_segment_distance(sc[None, :, :], la, lb) - radii[:, None] - sr[None, :]
    else:
        ds = np.zeros((len(seg_a), 0))
    if len(ca):
        dc = _segment_distance_batch(la, lb, ca[None, :, :], cb[None, :, :]) - radii[:, None] - cr[None, :]
    else:
        dc = np.zeros((len(seg_a), 0))
    return ds, ids, dc


def check_collision(seg_a, seg_b, radii, scene: PrimitiveScene,
                    ignore_targets: bool = True) -> CollisionResult:
    """Test posed link capsules against the scene.

    ``seg_a``/``seg_b`` are (L, 3) world-frame capsule endpoints and ``radii``
    the (L,) link radii.  A pair collides when its surface clearance is at
    most ``scene.margin``; the deepest pair is reported.
    """
    seg_a = np.asarray(seg_a, dtype=float).reshape(-1, 3)
    seg_b = np.asarray(seg_b, dtype=float).reshape(-1, 3)
    radii = np.asarray(radii, dtype=float).reshape(-1)
    ds, ids, dc = clearances(seg_a, seg_b, radii, scene, ignore_targets)
    worst_pen = -np.inf
    result = CollisionResult(True)
    if ds.size:
        i, j = np.unravel_index(np.argmin(ds), ds.shape)
        pen = scene.margin - ds[i, j]
        if pen >= 0 and pen > worst_pen:
            worst_pen = pen
            result = CollisionResult(False, int(i), "sphere", int(ids[j]), float(pen))
    if dc.size:
        i, j = np.unravel_index(np.argmin(dc), dc.shape)
        pen = scene.margin - dc[i, j]
        if pen >= 0 and pen > worst_pen:
            result = CollisionResult(False, int(i), "capsule", int(j), float(pen))
    return result
