"""Serial revolute chains: forward kinematics, Jacobian, damped least-squares IK."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import DimensionMismatch, NotConverged
from .geometry import RigidTransform, rotation_about, rotation_log


@dataclass(frozen=True, eq=False)
class JointSpec:
    axis: np.ndarray
    origin: RigidTransform = field(default_factory=RigidTransform.identity)
    limits: tuple = (-np.pi, np.pi)

    def __post_init__(self):
        axis = np.array(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(axis)
        if n == 0:
            raise ValueError("joint axis must be non-zero")
        if abs(n - 1.0) > 1e-12:
            axis = axis / n
        lo, hi = (float(x) for x in self.limits)
        if not lo <= hi:
            raise ValueError("joint limits must satisfy lower <= upper")
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "limits", (lo, hi))


@dataclass(frozen=True, eq=False)
class LinkCapsule:
    """Capsule rigidly attached to a link, endpoints in the link frame."""

    a: np.ndarray
    b: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.array(self.a, dtype=float).reshape(3))
        object.__setattr__(self, "b", np.array(self.b, dtype=float).reshape(3))
        if not self.radius > 0:
            raise ValueError("link capsule radius must be positive")


@dataclass(frozen=True, eq=False)
class KinematicChain:
    joints: tuple
    tip_offset: RigidTransform = field(default_factory=RigidTransform.identity)
    link_capsules: tuple = ()
    base: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "link_capsules", tuple(self.link_capsules))
        if not self.joints:
            raise ValueError("a chain needs at least one joint")
        if len(self.link_capsules) > len(self.joints):
            raise ValueError("more link capsules than links")
        lim = np.array([j.limits for j in self.joints], dtype=float)
        object.__setattr__(self, "_lower", lim[:, 0])
        object.__setattr__(self, "_upper", lim[:, 1])

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return self._lower

    @property
    def upper(self) -> np.ndarray:
        return self._upper

    def clamp(self, q) -> np.ndarray:
        return np.clip(q, self._lower, self._upper)

    def within_limits(self, q, tol: float = 0.0) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self._lower - tol) and np.all(q <= self._upper + tol))

    def reach(self) -> float:
        """Upper bound on the distance from the first joint to the tip."""
        total = sum(np.linalg.norm(j.origin.translation) for j in self.joints[1:])
        return float(total + np.linalg.norm(self.tip_offset.translation))

    def with_base(self, base: RigidTransform) -> KinematicChain:
        return KinematicChain(self.joints, self.tip_offset, self.link_capsules, base)


def _check_q(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if len(q) != chain.n_joints:
        raise DimensionMismatch(f"expected {chain.n_joints} joint values, got {len(q)}")
    return q


def _frames(chain: KinematicChain, q: np.ndarray):
    """World rotation/position of every link frame plus the tip, as arrays."""
    rot = chain.base.rotation
    pos = chain.base.translation
    rots, poss = [], []
    for joint, angle in zip(chain.joints, q):
        pos = pos + rot @ joint.origin.translation
        rot = rot @ joint.origin.rotation @ rotation_about(joint.axis, angle)
        rots.append(rot)
        poss.append(pos)
    tip_rot = rot @ chain.tip_offset.rotation
    tip_pos = pos + rot @ chain.tip_offset.translation
    return rots, poss, tip_rot, tip_pos


def fk(chain: KinematicChain, q) -> tuple[RigidTransform, list[RigidTransform]]:
    """Tip pose and the world frame of every link."""
    q = _check_q(chain, q)
    rots, poss, tip_rot, tip_pos = _frames(chain, q)
    links = [RigidTransform(r, p) for r, p in zip(rots, poss)]
    return RigidTransform(tip_rot, tip_pos), links


def tip_position(chain: KinematicChain, q) -> np.ndarray:
    return _frames(chain, _check_q(chain, q))[3]


def _batch_rotation(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    k = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    s = np.sin(angles)[:, None, None]
    c = np.cos(angles)[:, None, None]
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def tip_positions(chain: KinematicChain, qs) -> np.ndarray:
    """Vectorized tip positions for an (N, n) batch of configurations."""
    qs = np.asarray(qs, dtype=float)
    if qs.ndim != 2 or qs.shape[1] != chain.n_joints:
        raise DimensionMismatch(f"expected (N, {chain.n_joints}) configurations")
    n = len(qs)
    rot = np.broadcast_to(chain.base.rotation, (n, 3, 3))
    pos = np.broadcast_to(chain.base.translation, (n, 3))
    for i, joint in enumerate(chain.joints):
        pos = pos + rot @ joint.origin.translation
        rot = rot @ joint.origin.rotation @ _batch_rotation(joint.axis, qs[:, i])
    return pos + rot @ chain.tip_offset.translation


def link_segments(chain: KinematicChain, q) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World-frame capsule endpoints (L, 3), (L, 3) and radii (L,) at ``q``."""
    q = _check_q(chain, q)
    rots, poss, _, _ = _frames(chain, q)
    caps = chain.link_capsules
    a = np.array([poss[i] + rots[i] @ c.a for i, c in enumerate(caps)]).reshape(-1, 3)
    b = np.array([poss[i] + rots[i] @ c.b for i, c in enumerate(caps)]).reshape(-1, 3)
    r = np.array([c.radius for c in caps], dtype=float)
    return a, b, r


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """Geometric 6 x n Jacobian, linear rows first, in the world frame."""
    q = _check_q(chain, q)
    rot = chain.base.rotation
    pos = chain.base.translation
    axes, origins = [], []
    for joint, angle in zip(chain.joints, q):
        pos = pos + rot @ joint.origin.translation
        rot = rot @ joint.origin.rotation
        axes.append(rot @ joint.axis)
        origins.append(pos)
        rot = rot @ rotation_about(joint.axis, angle)
    tip = pos + rot @ chain.tip_offset.translation
    z = np.array(axes)
    p = np.array(origins)
    return np.vstack([np.cross(z, tip - p).T, z.T])


def ik_dls(chain: KinematicChain, target, q0, tol: float = 1e-4, max_iter: int = 200,
           damping: float = 0.05, max_step: float = 0.5, on_iterate=None) -> np.ndarray:
    """Position-only damped least-squares IK with joint-limit clamping.

    Each update is clamped to the limits (and to ``max_step`` rad in max
    norm), so every iterate is feasible.  ``on_iterate`` is called with
    each iterate.  Returns the first iterate whose tip is within ``tol`` of
    the target; raises NotConverged carrying the best one otherwise.
    """
    if tol <= 0 or damping <= 0:
        raise ValueError("tol and damping must be positive")
    target = np.asarray(target, dtype=float).reshape(3)
    q = chain.clamp(_check_q(chain, q0))
    lam2 = damping * damping
    best_q, best_err = q, np.inf
    for _ in range(max_iter + 1):
        e = target - tip_position(chain, q)
        err = float(np.linalg.norm(e))
        if err < best_err:
            best_q, best_err = q, err
        if err <= tol:
            return q
        jp = jacobian(chain, q)[:3]
        dq = jp.T @ np.linalg.solve(jp @ jp.T + lam2 * np.eye(3), e)
        peak = np.abs(dq).max()
        if peak > max_step:
            dq *= max_step / peak
        q = chain.clamp(q + dq)
        if on_iterate is not None:
            on_iterate(q)
    raise NotConverged(best_err, best_q)


def sample_configuration(chain: KinematicChain, rng) -> np.ndarray:
    """Uniform draw inside the joint limits; ``rng`` is a seed or a Generator."""
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return chain.lower + (chain.upper - chain.lower) * gen.random(chain.n_joints)


def orientation_error(r_a: np.ndarray, r_b: np.ndarray) -> np.ndarray:
    """Axis-angle vector of the rotation taking ``r_b`` to ``r_a``."""
    return rotation_log(r_a @ r_b.T)


# ---- JSON description ---------------------------------------------------------

def _transform_from_json(d) -> RigidTransform:
    if d is None:
        return RigidTransform.identity()
    return RigidTransform(np.asarray(d.get("rotation", np.eye(3).ravel()), dtype=float).reshape(3, 3),
                          d.get("translation", [0.0, 0.0, 0.0]))


def _transform_to_json(t: RigidTransform) -> dict:
    return {"rotation": t.rotation.ravel().tolist(), "translation": t.translation.tolist()}


def chain_from_dict(data: dict) -> KinematicChain:
    joints = [JointSpec(j["axis"], _transform_from_json(j.get("origin")), tuple(j["limits"]))
              for j in data["joints"]]
    caps = [LinkCapsule(c["a"], c["b"], c["radius"]) for c in data.get("link_capsules", [])]
    return KinematicChain(joints, _transform_from_json(data.get("tip_offset")), caps,
                          _transform_from_json(data.get("base")))


def chain_to_dict(chain: KinematicChain) -> dict:
    return {
        "joints": [{"axis": j.axis.tolist(), "origin": _transform_to_json(j.origin), "limits": list(j.limits)}
                   for j in chain.joints],
        "tip_offset": _transform_to_json(chain.tip_offset),
        "link_capsules": [{"a": c.a.tolist(), "b": c.b.tolist(), "radius": c.radius}
                          for c in chain.link_capsules],
        "base": _transform_to_json(chain.base),
    }


def reference_arm_dict() -> dict:
    text = resources.files("croprow").joinpath("data/reference_arm.json").read_text()
    return json.loads(text)


def reference_arm(base: RigidTransform | None = None) -> KinematicChain:
    """Bundled six-joint arm: waist, shoulder, elbow, and a three-joint wrist."""
    chain = chain_from_dict(reference_arm_dict())
    return chain if base is None else chain.with_base(base)


def planar_arm(lengths=(0.5, 0.4), radius: float = 0.02, limits=(-np.pi, np.pi)) -> KinematicChain:
    """Planar arm in the xy plane with z-axis joints, links along local x."""
    joints = [JointSpec((0, 0, 1), RigidTransform.from_translation((0.0 if i == 0 else lengths[i - 1], 0, 0)),
                        limits)
              for i in range(len(lengths))]
    caps = [LinkCapsule((0, 0, 0), (length, 0, 0), radius) for length in lengths]
    return KinematicChain(joints, RigidTransform.from_translation((lengths[-1], 0, 0)), caps)
