"""Frame-sequence registration, rig fusion and row-cloud assembly."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import binary_erosion, maximum_filter, minimum_filter, uniform_filter

from .cloud import (
    PointCloud, RGBDFrame, default_outlier_radius, deproject, foreground_mask,
    radius_outlier_removal, transform_cloud, xyz_map,
)
from .errors import (
    DegenerateMask, EmptyCloud, EmptyForeground, NoCorrespondences, NoSharedPixels,
    PairFailure, SequenceFailure,
)
from .geometry import RigidTransform, rotation_about
from .registration import (
    IcpParams, IcpResult, ShiftAxis, estimate_translation, icp, silhouette_shift,
)


@dataclass(frozen=True)
class PipelineConfig:
    depth_cutoff: float = 0.60
    nominal_step: float = 0.10
    max_shift: int = 80
    shift_axis: ShiftAxis = ShiftAxis.VERTICAL
    icp: IcpParams = IcpParams(max_iterations=300, correspondence_distance=0.004,
                               convergence_delta=1e-12)
    # earlier ICP passes run with the correspondence cap scaled by these factors
    icp_coarse_factors: tuple = (7.5, 2.5)
    target_upsample: int = 4
    edge_erosion: int = 2
    # box size (pixels) of the edge-aware depth smoothing used during registration; 0 disables
    depth_smoothing: int = 5
    min_fitness: float = 0.3
    max_step_ratio: float = 3.0
    outlier_radius: float | None = None  # None: 2x median spacing of the first frame's cloud
    outlier_min_neighbors: int = 4
    simplify_target: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "shift_axis", ShiftAxis(self.shift_axis))
        for name in ("depth_cutoff", "nominal_step", "max_step_ratio", "simplify_target",
                     "outlier_min_neighbors", "target_upsample"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_shift < 0 or self.edge_erosion < 0 or self.depth_smoothing < 0:
            raise ValueError("max_shift, edge_erosion and depth_smoothing must be non-negative")
        if not 0 < self.min_fitness <= 1:
            raise ValueError("min_fitness must lie in (0, 1]")
        if self.outlier_radius is not None and self.outlier_radius <= 0:
            raise ValueError("outlier_radius must be positive")


@dataclass(frozen=True)
class CameraRig:
    """Extrinsics (camera -> rig) of the left, center and right cameras."""

    left: RigidTransform
    center: RigidTransform
    right: RigidTransform
    spacing: float
    toe_in: float

    @classmethod
    def standard(cls, spacing: float = 0.25, toe_in: float = np.deg2rad(25.0),
                 beam_axis=(1.0, 0.0, 0.0), up_axis=(0.0, 1.0, 0.0)) -> CameraRig:
        """Three cameras on a straight beam, the outer two yawed toward the middle.

        ``beam_axis`` and ``up_axis`` are given in the center camera frame;
        the defaults suit the usual x-right / y-down camera convention.
        """
        beam = np.asarray(beam_axis, dtype=float)
        up = np.asarray(up_axis, dtype=float)
        # positive rotation about `up` must swing the optical axis toward +beam
        sign = 1.0 if np.dot(rotation_about(up, 0.1) @ np.array([0.0, 0.0, 1.0]), beam) > 0 else -1.0
        left = RigidTransform(rotation_about(up, sign * toe_in), -spacing * beam)
        right = RigidTransform(rotation_about(up, -sign * toe_in), spacing * beam)
        return cls(left, RigidTransform.identity(), right, spacing, toe_in)

    @property
    def extrinsics(self) -> tuple[RigidTransform, RigidTransform, RigidTransform]:
        return self.left, self.center, self.right


def fuse_rig(left: RGBDFrame, center: RGBDFrame, right: RGBDFrame, rig: CameraRig,
             cutoff: float) -> PointCloud:
    """Deproject all three views and merge them in the rig frame."""
    parts = []
    for frame, ext in zip((left, center, right), rig.extrinsics):
        try:
            parts.append(transform_cloud(deproject(frame, cutoff), ext))
        except EmptyForeground:
            continue
    if not parts:
        raise EmptyForeground("all three rig views are empty")
    return PointCloud.concatenate(parts)


def smooth_depth(frame: RGBDFrame, size: int, max_jump_mm: float = 10.0) -> RGBDFrame:
    """Box-average valid depths over ``size`` x ``size`` windows lying on one surface.

    Pixels whose window spans a depth jump above ``max_jump_mm`` or holds an
    invalid reading keep their raw value, so silhouettes do not bleed.
    Averaging removes most of the millimeter quantization of stored depth.
    """
    if size <= 1:
        return frame
    d = np.asarray(frame.depth, dtype=float)
    valid = d > 0
    mean = uniform_filter(d, size, mode="constant")
    full = uniform_filter(valid.astype(float), size, mode="constant") > 1.0 - 1e-9
    spread = maximum_filter(np.where(valid, d, -np.inf), size) - minimum_filter(np.where(valid, d, np.inf), size)
    ok = valid & full & (spread < max_jump_mm)
    return RGBDFrame(frame.color, np.where(ok, mean, d), frame.intrinsics, frame.index)


def continuous_windows(z: np.ndarray, mask: np.ndarray, size: int, off: int, max_jump: float) -> np.ndarray:
    """True at (r, c) when the ``size`` x ``size`` window starting at (r - off, c - off)
    lies inside the image, is entirely valid, and spans less than ``max_jump`` in depth."""
    # invalid pixels poison any window containing them
    hi_in = np.where(mask, z, np.inf)
    lo_in = np.where(mask, z, -np.inf)
    # scipy centers windows at size // 2; shift so the window starts `off` before the pixel
    origin = off - size // 2
    hi = maximum_filter(hi_in, size, mode="constant", cval=np.inf, origin=origin)
    lo = minimum_filter(lo_in, size, mode="constant", cval=-np.inf, origin=origin)
    return np.isfinite(hi) & np.isfinite(lo) & (hi - lo < max_jump)


def _catmull_rom(t: float) -> np.ndarray:
    """Weights of samples at offsets -1, 0, 1, 2 for a point at fraction ``t``."""
    return 0.5 * np.array([
        -t ** 3 + 2 * t ** 2 - t,
        3 * t ** 3 - 5 * t ** 2 + 2,
        -3 * t ** 3 + 4 * t ** 2 + t,
        t ** 3 - t ** 2,
    ])


def densified_cloud(frame: RGBDFrame, cutoff: float, factor: int, max_jump: float = 0.01,
                    jitter: bool = False, seed: int = 0) -> PointCloud:
    """Foreground points plus a ``factor`` x ``factor`` grid of sub-pixel samples per pixel cell.

    Depth between pixel centers is interpolated only inside 2x2 blocks that
    lie on one continuous surface.  Where the surrounding 4x4 block is also
    continuous, bicubic (Catmull-Rom) interpolation is used; bilinear chords
    cut inside curved surfaces by an amount that grows with the square of the
    pixel footprint, which measurably biases registration of thin stems.

    With ``jitter`` each sub-sample is drawn uniformly inside its own
    ``1/factor`` sub-cell (seeded by ``seed``) instead of at the sub-cell
    corner.  A point-to-point nearest-neighbor objective against a regular
    lattice ripples with the lattice period and can trap ICP a fraction of a
    millimeter off; stratified samples remove that periodic structure.
    """
    mask = foreground_mask(frame.depth, cutoff)
    base = xyz_map(frame)[mask]
    if factor <= 1:
        return PointCloud(base)
    z = np.asarray(frame.depth, dtype=float) / 1000.0
    h, w = z.shape
    intr = frame.intrinsics
    quad = continuous_windows(z, mask, 2, 0, max_jump)[:-1, :-1]
    vv, uu = np.nonzero(quad)
    cubic = continuous_windows(z, mask, 4, 1, max_jump)[vv, uu]
    cubic &= (vv >= 1) & (uu >= 1) & (vv + 2 < h) & (uu + 2 < w)
    # 4x4 neighborhoods of every cell, rows -1..2 and columns -1..2 around (vv, uu)
    rows = np.clip(vv[:, None] + np.arange(-1, 3)[None, :], 0, h - 1)
    cols = np.clip(uu[:, None] + np.arange(-1, 3)[None, :], 0, w - 1)
    patch = z[rows[:, :, None], cols[:, None, :]]  # (n, 4, 4)
    out = [base]
    rng = np.random.default_rng(seed)
    for i in range(factor):
        for j in range(factor):
            if i == 0 and j == 0:
                continue  # the pixel itself is already in `base`
            if jitter:
                fu = (i + rng.random(len(vv))) / factor
                fv = (j + rng.random(len(vv))) / factor
            else:
                fu, fv = i / factor, j / factor
            lin = (patch[:, 1, 1] * (1 - fu) * (1 - fv) + patch[:, 1, 2] * fu * (1 - fv)
                   + patch[:, 2, 1] * (1 - fu) * fv + patch[:, 2, 2] * fu * fv)
            wv = np.broadcast_to(_catmull_rom(np.asarray(fv, dtype=float)).T, (len(vv), 4))
            wu = np.broadcast_to(_catmull_rom(np.asarray(fu, dtype=float)).T, (len(vv), 4))
            cub = np.einsum("ni,nij,nj->n", wv, patch, wu)
            zz = np.where(cubic, cub, lin)
            u = uu + fu
            v = vv + fv
            out.append(np.stack([(u - intr.cx) / intr.fx * zz, (v - intr.cy) / intr.fy * zz, zz], axis=1))
    return PointCloud(np.concatenate(out))


def _overlap_source(frame: RGBDFrame, cfg: PipelineConfig, shift: int) -> PointCloud:
    """Second-frame points expected to be visible in the first frame, minus silhouette edges."""
    mask = foreground_mask(frame.depth, cfg.depth_cutoff)
    if cfg.edge_erosion:
        eroded = binary_erosion(mask, iterations=cfg.edge_erosion)
        if eroded.any():
            mask = eroded
    h, w = mask.shape
    crop = mask.copy()
    if cfg.shift_axis == ShiftAxis.VERTICAL:
        keep = h - shift - h // 20
        crop[max(keep, 0):, :] = False
    else:
        keep = w - shift - w // 20
        crop[:, max(keep, 0):] = False
    if crop.any():
        mask = crop
    return PointCloud(xyz_map(frame)[mask])


def register_pair(first: RGBDFrame, second: RGBDFrame, cfg: PipelineConfig = PipelineConfig()) -> IcpResult:
    """Register ``second`` into ``first``'s camera frame.

    Foreground masks feed the silhouette shift search, the shift gives the
    mean 3D displacement of shared pixels, and ICP refines from there in a
    coarse-to-fine sequence of correspondence caps.  The returned transform
    maps second-frame points into the first frame.
    """
    if np.shape(first.depth) != np.shape(second.depth):
        raise ValueError("frames differ in size")
    first = smooth_depth(first, cfg.depth_smoothing)
    second = smooth_depth(second, cfg.depth_smoothing)
    try:
        m1 = foreground_mask(first.depth, cfg.depth_cutoff)
        m2 = foreground_mask(second.depth, cfg.depth_cutoff)
        shift, _ = silhouette_shift(m1, m2, cfg.max_shift, cfg.shift_axis)
        translation = estimate_translation(first, second, shift, cfg.depth_cutoff, cfg.shift_axis)
        source = _overlap_source(second, cfg, shift)
        target = densified_cloud(first, cfg.depth_cutoff, cfg.target_upsample, jitter=True)
        current = RigidTransform.from_translation(translation)
        result = None
        base = cfg.icp.correspondence_distance
        for factor in (*cfg.icp_coarse_factors, 1.0):
            params = replace(cfg.icp, correspondence_distance=base * factor)
            if factor != 1.0:
                # coarse passes only need to reach the fine pass's basin
                params = replace(params, max_iterations=min(params.max_iterations, 40),
                                 convergence_delta=max(params.convergence_delta, 1e-8))
            result = icp(source, target, current, params)
            current = result.transform
    except (DegenerateMask, NoSharedPixels, NoCorrespondences, EmptyCloud) as exc:
        raise PairFailure(exc) from exc
    return result


@dataclass
class RegistrationReport:
    frame_indices: list = field(default_factory=list)  # accepted frames, in order
    poses: list = field(default_factory=list)  # row-frame pose of each accepted frame
    skipped: list = field(default_factory=list)
    pair_fitness: list = field(default_factory=list)
    pair_transforms: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)  # skipped frame -> reason

    def pose_of(self, frame_index: int) -> RigidTransform:
        return self.poses[self.frame_indices.index(frame_index)]


def register_sequence(frames, cfg: PipelineConfig = PipelineConfig(), pair_fn=register_pair,
                      remove_outliers: bool = True) -> tuple[PointCloud, RegistrationReport]:
    """Chain pairwise registrations along the row with skip-on-failure.

    Each frame is registered against the most recently accepted one.  A
    frame whose pair fails, lands below ``min_fitness`` or implies an
    implausible step is skipped, and the next frame is tried against the
    same anchor.  Returns the merged, outlier-filtered row cloud and the
    report of poses and skips.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    report = RegistrationReport()
    try:
        clouds = [deproject(frames[0], cfg.depth_cutoff)]
    except EmptyForeground as exc:
        raise SequenceFailure(f"first frame is empty: {exc}") from exc
    report.frame_indices.append(0)
    report.poses.append(RigidTransform.identity())
    anchor = 0
    for k in range(1, len(frames)):
        reason = None
        try:
            res = pair_fn(frames[anchor], frames[k], cfg)
        except PairFailure as exc:
            reason = f"{type(exc.cause).__name__}: {exc.cause}"
        else:
            step = float(np.linalg.norm(res.transform.translation))
            if res.fitness < cfg.min_fitness:
                reason = f"fitness {res.fitness:.3f} below {cfg.min_fitness}"
            elif step > cfg.max_step_ratio * cfg.nominal_step * (k - anchor):
                reason = f"step {step:.3f} m implausible"
        if reason is not None:
            report.skipped.append(k)
            report.failures[k] = reason
            continue
        pose = report.poses[-1] @ res.transform
        report.frame_indices.append(k)
        report.poses.append(pose)
        report.pair_fitness.append(res.fitness)
        report.pair_transforms.append(res.transform)
        clouds.append(transform_cloud(deproject(frames[k], cfg.depth_cutoff), pose))
        anchor = k
    if len(report.frame_indices) < 2:
        raise SequenceFailure("fewer than two frames could be registered")
    merged = PointCloud.concatenate(clouds)
    if remove_outliers:
        merged = remove_row_outliers(merged, cfg, spacing_reference=clouds[0])
    return merged, report


def remove_row_outliers(cloud: PointCloud, cfg: PipelineConfig,
                        spacing_reference: PointCloud | None = None) -> PointCloud:
    """Radius outlier removal with the configured or default radius.

    The default radius is measured on ``spacing_reference`` (a single view)
    when given.  Overlapping views put near-duplicate points in the merged
    cloud, so its own nearest-neighbor spacing shrinks with the number of
    frames and would make the filter discard almost everything on short runs.
    """
    radius = cfg.outlier_radius
    if radius is None:
        ref = cloud if spacing_reference is None or len(spacing_reference) < 2 else spacing_reference
        if len(ref) < 2:
            return cloud
        radius = default_outlier_radius(ref)
        if radius <= 0:
            return cloud
    return radius_outlier_removal(cloud, radius, cfg.outlier_min_neighbors)
