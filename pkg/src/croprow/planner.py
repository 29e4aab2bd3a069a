"""Grasp-goal generation and joint-space path planning (RRT-Connect and RRT)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NoGoalsFound, NotConverged, PlanningTimeout, StartInCollision
from .kinematics import KinematicChain, _batch_rotation, ik_dls, tip_position, tip_positions
from .scene import PrimitiveScene, clearances

ALGORITHMS = ("rrt_connect", "rrt")


@dataclass(frozen=True)
class PlannerConfig:
    ik_trigger_threshold: float = 0.65
    dedup_tolerance: float = 0.01
    goal_count: int = 60
    max_fk_samples: int = 200_000
    ik_tol: float = 1e-3
    ik_max_iter: int = 100
    ik_damping: float = 0.05
    algorithm: str = "rrt_connect"
    step_size: float = 0.1
    max_planner_iterations: int = 20_000
    collision_resolution: float = 0.02
    shortcut_iterations: int = 100
    goal_bias: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("ik_trigger_threshold", "dedup_tolerance", "goal_count", "max_fk_samples", "ik_tol",
                     "ik_max_iter", "ik_damping", "step_size", "max_planner_iterations",
                     "collision_resolution"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.dedup_tolerance >= np.pi:
            raise ValueError("dedup_tolerance must be below pi")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.shortcut_iterations < 0 or not 0 <= self.goal_bias < 1:
            raise ValueError("shortcut_iterations must be >= 0 and goal_bias in [0, 1)")


# ---- batched collision checking ------------------------------------------------

def _segments_batch(chain: KinematicChain, qs: np.ndarray):
    n = len(qs)
    rot = np.broadcast_to(chain.base.rotation, (n, 3, 3))
    pos = np.broadcast_to(chain.base.translation, (n, 3))
    seg_a, seg_b = [], []
    caps = chain.link_capsules
    for i, joint in enumerate(chain.joints):
        pos = pos + rot @ joint.origin.translation
        rot = rot @ joint.origin.rotation @ _batch_rotation(joint.axis, qs[:, i])
        if i < len(caps):
            seg_a.append(pos + rot @ caps[i].a)
            seg_b.append(pos + rot @ caps[i].b)
    if not seg_a:
        return np.zeros((n, 0, 3)), np.zeros((n, 0, 3))
    return np.stack(seg_a, axis=1), np.stack(seg_b, axis=1)


def configs_free(chain: KinematicChain, scene: PrimitiveScene, qs, ignore_targets: bool = True) -> np.ndarray:
    """Boolean per configuration: every link capsule clears every obstacle by more than the margin."""
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    if not chain.link_capsules:
        return np.ones(len(qs), dtype=bool)
    a, b = _segments_batch(chain, qs)
    n, n_links = a.shape[:2]
    radii = np.tile([c.radius for c in chain.link_capsules], n)
    ds, _, dc = clearances(a.reshape(-1, 3), b.reshape(-1, 3), radii, scene, ignore_targets)
    free = np.ones(n, dtype=bool)
    if ds.size:
        free &= (ds.reshape(n, n_links, -1) > scene.margin).all(axis=(1, 2))
    if dc.size:
        free &= (dc.reshape(n, n_links, -1) > scene.margin).all(axis=(1, 2))
    return free


def config_free(chain, scene, q, ignore_targets: bool = True) -> bool:
    return bool(configs_free(chain, scene, q, ignore_targets)[0])


def interpolate(q0, q1, resolution: float) -> np.ndarray:
    """Configurations from q0 to q1 inclusive, consecutive spacing <= resolution."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    steps = max(int(np.ceil(np.linalg.norm(q1 - q0) / resolution)), 1)
    t = np.linspace(0.0, 1.0, steps + 1)[:, None]
    return q0 + t * (q1 - q0)


def edge_free(chain, scene, q0, q1, resolution: float) -> bool:
    return bool(configs_free(chain, scene, interpolate(q0, q1, resolution)).all())


# ---- goals ---------------------------------------------------------------------

@dataclass
class GoalSet:
    configurations: list = field(default_factory=list)
    tip_errors: list = field(default_factory=list)
    rejections: dict = field(default_factory=lambda: {"threshold": 0, "ik": 0, "collision": 0, "dedup": 0})
    samples_drawn: int = 0

    @property
    def trigger_passed(self) -> int:
        return self.samples_drawn - self.rejections["threshold"]

    def __len__(self):
        return len(self.configurations)


def _is_duplicate(q, accepted: list, tol: float) -> bool:
    if not accepted:
        return False
    return bool(np.any(np.abs(np.asarray(accepted) - q).max(axis=1) <= tol))


def sample_goal_configs(chain: KinematicChain, scene: PrimitiveScene, target, cfg: PlannerConfig = PlannerConfig(),
                        batch: int = 4096) -> GoalSet:
    """Randomized FK search for distinct, collision-free configurations reaching ``target``.

    Random configurations whose tip falls within the trigger threshold of
    the target are refined by IK.  A refined configuration is kept if IK
    converged, it is collision-free (target spheres ignored) and no kept
    configuration lies within the dedup tolerance of it in every joint.
    """
    target = np.asarray(target, dtype=float).reshape(3)
    if not np.all(np.isfinite(target)):
        raise ValueError("target must be finite")
    rng = np.random.default_rng(cfg.seed)
    goals = GoalSet()
    rej = goals.rejections
    span = chain.upper - chain.lower
    drawn = 0
    while drawn < cfg.max_fk_samples and len(goals) < cfg.goal_count:
        m = min(batch, cfg.max_fk_samples - drawn)
        qs = chain.lower + span * rng.random((m, chain.n_joints))
        near = np.linalg.norm(tip_positions(chain, qs) - target, axis=1) <= cfg.ik_trigger_threshold
        for i in range(m):
            drawn += 1
            if not near[i]:
                rej["threshold"] += 1
                continue
            try:
                q = ik_dls(chain, target, qs[i], cfg.ik_tol, cfg.ik_max_iter, cfg.ik_damping)
            except NotConverged:
                rej["ik"] += 1
                continue
            if not config_free(chain, scene, q):
                rej["collision"] += 1
                continue
            if _is_duplicate(q, goals.configurations, cfg.dedup_tolerance):
                rej["dedup"] += 1
                continue
            goals.configurations.append(q)
            goals.tip_errors.append(float(np.linalg.norm(target - tip_position(chain, q))))
            if len(goals) >= cfg.goal_count:
                break
    goals.samples_drawn = drawn
    if not goals.configurations:
        raise NoGoalsFound(rej)
    return goals


# ---- paths ---------------------------------------------------------------------

@dataclass
class Path:
    waypoints: np.ndarray
    unshortened_length: float | None = None

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if len(self.waypoints) < 2:
            raise ValueError("a path needs at least two waypoints")

    @property
    def length(self) -> float:
        return path_length(self.waypoints)


def path_length(waypoints) -> float:
    w = np.asarray(waypoints, dtype=float)
    return float(np.linalg.norm(np.diff(w, axis=0), axis=1).sum())


def validate_path(chain, scene, path, resolution: float) -> bool:
    """True iff every configuration interpolated at ``resolution`` spacing is collision-free."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    w = path.waypoints if isinstance(path, Path) else np.atleast_2d(np.asarray(path, dtype=float))
    dense = [w[:1]] + [interpolate(w[i], w[i + 1], resolution)[1:] for i in range(len(w) - 1)]
    return bool(configs_free(chain, scene, np.vstack(dense)).all())


def _subdivide(waypoints: np.ndarray, step: float) -> np.ndarray:
    out = [waypoints[:1]]
    for i in range(len(waypoints) - 1):
        out.append(interpolate(waypoints[i], waypoints[i + 1], step)[1:])
    return np.vstack(out)


def shortcut(chain, scene, waypoints, cfg: PlannerConfig, rng) -> np.ndarray:
    """Random-pair shortcutting: replace a sub-path by its direct edge when that edge is free."""
    w = [np.asarray(q, dtype=float) for q in waypoints]
    for _ in range(cfg.shortcut_iterations):
        if len(w) < 3:
            break
        i, j = sorted(rng.choice(len(w), 2, replace=False))
        if j - i < 2:
            continue
        if edge_free(chain, scene, w[i], w[j], cfg.collision_resolution):
            w = w[:i + 1] + w[j:]
    return np.array(w)


class _Tree:
    def __init__(self, roots):
        roots = np.atleast_2d(roots)
        self.nodes = np.empty((max(64, 2 * len(roots)), roots.shape[1]))
        self.nodes[:len(roots)] = roots
        self.parent = [-1] * len(roots)
        self.size = len(roots)

    def add(self, q, parent: int) -> int:
        if self.size == len(self.nodes):
            self.nodes = np.vstack([self.nodes, np.empty_like(self.nodes)])
        self.nodes[self.size] = q
        self.parent.append(parent)
        self.size += 1
        return self.size - 1

    def nearest(self, q) -> int:
        d = ((self.nodes[:self.size] - q) ** 2).sum(axis=1)
        return int(np.argmin(d))

    def branch(self, idx: int) -> list:
        """Nodes from ``idx`` back to its root."""
        out = []
        while idx != -1:
            out.append(self.nodes[idx].copy())
            idx = self.parent[idx]
        return out


_TRAPPED, _ADVANCED, _REACHED = 0, 1, 2


def _extend(tree: _Tree, q, chain, scene, cfg) -> tuple[int, int]:
    near = tree.nearest(q)
    qn = tree.nodes[near]
    diff = q - qn
    dist = np.linalg.norm(diff)
    if dist <= cfg.step_size:
        q_new, status = q, _REACHED
    else:
        q_new, status = qn + diff * (cfg.step_size / dist), _ADVANCED
    if dist == 0:
        return _REACHED, near
    if not edge_free(chain, scene, qn, q_new, cfg.collision_resolution):
        return _TRAPPED, -1
    return status, tree.add(q_new, near)


def _connect(tree: _Tree, q, chain, scene, cfg) -> tuple[int, int]:
    while True:
        status, idx = _extend(tree, q, chain, scene, cfg)
        if status != _ADVANCED:
            return status, idx


def _rrt_connect(chain, scene, start, goals, cfg, rng):
    trees = [_Tree(start), _Tree(goals)]
    for it in range(cfg.max_planner_iterations):
        a, b = trees[it % 2], trees[1 - it % 2]
        q_rand = chain.lower + (chain.upper - chain.lower) * rng.random(chain.n_joints)
        status, ia = _extend(a, q_rand, chain, scene, cfg)
        if status == _TRAPPED:
            continue
        status, ib = _connect(b, a.nodes[ia], chain, scene, cfg)
        if status == _REACHED:
            start_tree, goal_tree = trees
            i_s, i_g = (ia, ib) if a is start_tree else (ib, ia)
            head = start_tree.branch(i_s)[::-1]
            tail = goal_tree.branch(i_g)
            return np.array(head + tail[1:]), it + 1
    raise PlanningTimeout(cfg.max_planner_iterations, [t.size for t in trees])


def _rrt(chain, scene, start, goals, cfg, rng):
    tree = _Tree(start)
    for it in range(cfg.max_planner_iterations):
        if rng.random() < cfg.goal_bias:
            q_rand = goals[rng.integers(len(goals))]
        else:
            q_rand = chain.lower + (chain.upper - chain.lower) * rng.random(chain.n_joints)
        status, idx = _extend(tree, q_rand, chain, scene, cfg)
        if status == _TRAPPED:
            continue
        q_new = tree.nodes[idx]
        d = np.linalg.norm(goals - q_new, axis=1)
        for g in np.argsort(d, kind="stable"):
            if d[g] > cfg.step_size:
                break
            if edge_free(chain, scene, q_new, goals[g], cfg.collision_resolution):
                end = tree.add(goals[g], idx)
                return np.array(tree.branch(end)[::-1]), it + 1
    raise PlanningTimeout(cfg.max_planner_iterations, [tree.size])


def plan(chain: KinematicChain, scene: PrimitiveScene, start, goals, cfg: PlannerConfig = PlannerConfig()) -> Path:
    """Joint-space path from ``start`` to any goal configuration.

    RRT-Connect grows one tree from the start and one from all goals at
    once; RRT grows from the start with goal biasing.  The raw path is
    shortcut, then re-subdivided so no step exceeds ``step_size``.
    """
    goal_arr = np.atleast_2d(np.asarray(goals.configurations if isinstance(goals, GoalSet) else goals,
                                        dtype=float))
    if goal_arr.size == 0:
        raise ValueError("goal set is empty")
    start = np.asarray(start, dtype=float).reshape(-1)
    if goal_arr.shape[1] != len(start) or len(start) != chain.n_joints:
        raise ValueError("start and goals must have one value per joint")
    if not config_free(chain, scene, start):
        raise StartInCollision("start configuration collides with the scene")
    if np.any(np.abs(goal_arr - start).max(axis=1) <= cfg.dedup_tolerance):
        return Path(np.array([start, start]), 0.0)
    rng = np.random.default_rng(cfg.seed)
    search = _rrt_connect if cfg.algorithm == "rrt_connect" else _rrt
    raw, _ = search(chain, scene, start, goal_arr, cfg, rng)
    raw = _subdivide(raw, cfg.step_size)
    short = shortcut(chain, scene, raw, cfg, rng)
    return Path(_subdivide(short, cfg.step_size), path_length(raw))


# ---- scenario --------------------------------------------------------------------

@dataclass
class ScenarioReport:
    target_id: int
    target_point: np.ndarray
    goals: GoalSet
    path: Path
    timings_ms: dict
    valid: bool
    seed: int

    def to_dict(self, timings: bool = True) -> dict:
        out = {
            "seed": self.seed,
            "target_id": self.target_id,
            "target_point": np.asarray(self.target_point).tolist(),
            "goal_count": len(self.goals),
            "goal_samples_drawn": self.goals.samples_drawn,
            "goal_rejections": dict(self.goals.rejections),
            "goal_tip_errors": list(self.goals.tip_errors),
            "path_length": self.path.length,
            "path_waypoints": self.path.waypoints.tolist(),
            "path_valid": self.valid,
        }
        if timings:
            out["timings_ms"] = dict(self.timings_ms)
        return out


def grasp_point(chain: KinematicChain, scene: PrimitiveScene, target_id: int) -> np.ndarray:
    """Surface point of the target sphere nearest the arm's first joint."""
    if target_id not in scene.targets:
        raise ValueError(f"sphere {target_id} is not a target; targets are {scene.targets}")
    sphere = scene.spheres[target_id]
    base = chain.base.apply(chain.joints[0].origin.translation)
    away = sphere.center - base
    n = np.linalg.norm(away)
    if n == 0:
        return sphere.center.copy()
    return sphere.center - sphere.radius * away / n


def run_scenario(chain: KinematicChain, scene: PrimitiveScene, target_id: int,
                 cfg: PlannerConfig = PlannerConfig()) -> ScenarioReport:
    """Goal sampling then planning from the all-zero configuration, with per-stage wall times."""
    if not scene.targets:
        raise ValueError("scene has no target spheres")
    start = np.zeros(chain.n_joints)
    if not config_free(chain, scene, start):
        raise StartInCollision("zero configuration collides with the scene")
    target = grasp_point(chain, scene, target_id)
    t0 = time.perf_counter()
    goals = sample_goal_configs(chain, scene, target, cfg)
    t1 = time.perf_counter()
    path = plan(chain, scene, start, goals, cfg)
    t2 = time.perf_counter()
    valid = validate_path(chain, scene, path, cfg.collision_resolution)
    t3 = time.perf_counter()
    timings = {"goal_sampling": 1e3 * (t1 - t0), "planning": 1e3 * (t2 - t1), "validation": 1e3 * (t3 - t2)}
    return ScenarioReport(target_id, target, goals, path, timings, valid, cfg.seed)
