"""Pairwise registration: silhouette shift prior, mean displacement, ICP."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, RGBDFrame, foreground_mask, xyz_map
from .errors import DegenerateMask, EmptyCloud, NoCorrespondences, NoSharedPixels
from .geometry import RigidTransform, kabsch


class ShiftAxis(str, Enum):
    VERTICAL = "vertical"
    HORIZONTAL = "horizontal"


def _overlap(first: np.ndarray, second: np.ndarray, shift: int, axis: ShiftAxis):
    """Windows of ``first`` moved by ``shift`` px (up or left) against ``second``."""
    if axis == ShiftAxis.VERTICAL:
        h = first.shape[0]
        return first[shift:, :], second[: h - shift, :]
    w = first.shape[1]
    return first[:, shift:], second[:, : w - shift]


def shift_mask(mask: np.ndarray, shift: int, axis: ShiftAxis = ShiftAxis.VERTICAL) -> np.ndarray:
    """Move mask content up (or left) by ``shift`` pixels, filling with background."""
    out = np.zeros_like(mask)
    a, b = _overlap(mask, out, shift, ShiftAxis(axis))
    b[...] = a
    return out


def silhouette_shift(first: np.ndarray, second: np.ndarray, max_shift: int,
                     axis: ShiftAxis = ShiftAxis.VERTICAL) -> tuple[int, int]:
    """Find the shift of ``first`` that best overlays its silhouette on ``second``.

    Scores each shift in ``[0, max_shift]`` by the XOR count over the
    overlapping window divided by the window area; the smallest shift wins
    ties.  Returns ``(shift, mismatch_count)``.
    """
    axis = ShiftAxis(axis)
    first = np.asarray(first, dtype=bool)
    second = np.asarray(second, dtype=bool)
    if first.shape != second.shape:
        raise ValueError("masks differ in size")
    extent = first.shape[0] if axis == ShiftAxis.VERTICAL else first.shape[1]
    if not 0 <= max_shift < extent:
        raise ValueError(f"max_shift must lie in [0, {extent})")
    if not first.any() or not second.any():
        raise DegenerateMask("a mask has no foreground")

    best_shift, best_count, best_area = 0, None, 1
    for s in range(max_shift + 1):
        a, b = _overlap(first, second, s, axis)
        count = int(np.count_nonzero(a ^ b))
        area = a.size
        # exact comparison of count/area ratios
        if best_count is None or count * best_area < best_count * area:
            best_shift, best_count, best_area = s, count, area
    return best_shift, best_count


def shared_pixels(first: RGBDFrame, second: RGBDFrame, shift: int, cutoff: float,
                  axis: ShiftAxis = ShiftAxis.VERTICAL) -> tuple[np.ndarray, np.ndarray]:
    """Camera-frame points of pixels foreground in both frames under ``shift``.

    Returns matched ``(N, 3)`` arrays, first-frame points then second-frame points.
    """
    axis = ShiftAxis(axis)
    m1, m2 = foreground_mask(first.depth, cutoff), foreground_mask(second.depth, cutoff)
    if m1.shape != m2.shape:
        raise ValueError("frames differ in size")
    x1, x2 = xyz_map(first), xyz_map(second)
    w1, w2 = _overlap(m1, m2, shift, axis)
    both = w1 & w2
    p1, p2 = _overlap(x1, x2, shift, axis)
    return p1[both], p2[both]


def estimate_translation(first: RGBDFrame, second: RGBDFrame, shift: int, cutoff: float,
                         axis: ShiftAxis = ShiftAxis.VERTICAL) -> np.ndarray:
    """Mean XYZ difference (first minus second) over the shifted shared foreground.

    For a camera that translated by ``d`` between the frames this is ``d``
    expressed in the first camera's frame, i.e. the translation taking
    second-frame points into the first frame.
    """
    p1, p2 = shared_pixels(first, second, shift, cutoff, axis)
    if len(p1) == 0:
        raise NoSharedPixels("shifted foregrounds do not overlap")
    return (p1 - p2).mean(axis=0)


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 60
    correspondence_distance: float = 0.01
    convergence_delta: float = 1e-10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.correspondence_distance <= 0:
            raise ValueError("correspondence_distance must be positive")
        if self.convergence_delta < 0:
            raise ValueError("convergence_delta must be non-negative")


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    fitness: float
    rms_error: float
    iterations: int = 0
    # (rms before update, rms after update) at fixed correspondences, per iteration
    history: list = field(default_factory=list, repr=False)


def _match(tree: cKDTree, pts: np.ndarray, cap: float):
    dist, idx = tree.query(pts, distance_upper_bound=cap * (1 + 1e-12))
    ok = dist <= cap
    return dist, idx, ok


def icp(source: PointCloud, target: PointCloud, init: RigidTransform | None = None,
        params: IcpParams = IcpParams()) -> IcpResult:
    """Point-to-point ICP returning the transform that maps ``source`` into ``target``.

    Each iteration pairs every transformed source point with its nearest
    target point (pairs farther than ``correspondence_distance`` are
    dropped) and applies the closed-form least-squares rigid update.
    Stops after ``max_iterations`` or once the RMS improvement drops below
    ``convergence_delta``.
    """
    if len(source) == 0 or len(target) == 0:
        raise EmptyCloud("ICP needs two non-empty clouds")
    cap = params.correspondence_distance
    src = source.points
    dst = target.points
    tree = cKDTree(dst)
    current = RigidTransform.identity() if init is None else init
    history = []
    it = 0
    for it in range(1, params.max_iterations + 1):
        moved = current.apply(src)
        dist, idx, ok = _match(tree, moved, cap)
        if not ok.any():
            if it == 1:
                raise NoCorrespondences("no source point within correspondence distance")
            break
        rms_before = float(np.sqrt(np.mean(dist[ok] ** 2)))
        if rms_before == 0.0:
            break  # already exact; an SVD update would only add round-off
        step = kabsch(moved[ok], dst[idx[ok]])
        after = step.apply(moved[ok]) - dst[idx[ok]]
        rms_after = float(np.sqrt(np.mean((after * after).sum(axis=1))))
        history.append((rms_before, rms_after))
        current = step @ current
        if rms_before - rms_after < params.convergence_delta:
            break

    dist, _, ok = _match(tree, current.apply(src), cap)
    fitness = float(ok.mean())
    rms = float(np.sqrt(np.mean(dist[ok] ** 2))) if ok.any() else 0.0
    return IcpResult(current, fitness, rms, it, history)
