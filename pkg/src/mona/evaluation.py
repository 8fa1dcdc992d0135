"""Trajectory metrics and a per-frame PnP pose estimator.

The PnP estimator is a deliberately small stand-in for a full bundle
adjustment: each frame's camera pose is fit to known 3-D landmarks by
least squares on reprojection error. Feeding it observations of moving
objects as if they were static reproduces the failure that motivates
masking them out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateConfigurationError,
    InsufficientOverlapError,
    SolverDivergedError,
    TooFewObservationsError,
    ValidationError,
)
from .geometry import (
    CameraIntrinsics,
    Pose,
    SimilarityTransform,
    Trajectory,
    apply_similarity,
    compose_poses,
    invert_pose,
    quat_angle,
    quat_from_matrix,
    rotvec_to_matrix,
    skew,
)
from .objects import ObjectMask, masked_point_flags

MIN_PNP_OBSERVATIONS = 6


@dataclass(frozen=True)
class AlignmentResult:
    transform: SimilarityTransform
    residuals: np.ndarray
    mode: str

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean(self.residuals**2)))


@dataclass(frozen=True)
class TrajectoryMetrics:
    ate_rmse: float
    rpe_trans: float
    rpe_rot: float
    delta: int


# ---------------------------------------------------------------------------
# alignment and metrics
# ---------------------------------------------------------------------------


def _common(est: Trajectory, ref: Trajectory) -> list[int]:
    return sorted(set(est.frames) & set(ref.frames))


def umeyama_align(est: Trajectory, ref: Trajectory, with_scale: bool = True) -> AlignmentResult:
    """Closed-form least-squares transform taking ``est`` positions onto ``ref``.

    Collinear inputs are accepted: the residual optimum is still unique even
    though the rotation about the line is not.
    """
    frames = _common(est, ref)
    if len(frames) < 3:
        raise InsufficientOverlapError(f"{len(frames)} common frame(s); need at least 3")
    x = est.select(frames).positions()
    y = ref.select(frames).positions()
    n = len(frames)
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    var_x = float(np.sum(xc**2)) / n
    var_y = float(np.sum(yc**2)) / n
    scale_ref = max(1.0, float(np.max(np.abs(x))), float(np.max(np.abs(y))))
    if var_x <= (1e-12 * scale_ref) ** 2 or var_y <= (1e-12 * scale_ref) ** 2:
        raise DegenerateConfigurationError("trajectory positions are coincident")
    cov = yc.T @ xc / n
    u, d, vt = np.linalg.svd(cov)
    sgn = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sgn[2] = -1.0
    r = u @ np.diag(sgn) @ vt
    s = float(np.sum(d * sgn) / var_x) if with_scale else 1.0
    if with_scale and not s > 0:
        raise DegenerateConfigurationError(f"non-positive scale {s!r}")
    t = my - s * r @ mx
    transform = SimilarityTransform(s, quat_from_matrix(r), t)
    residuals = np.linalg.norm(y - transform.apply(x), axis=1)
    return AlignmentResult(transform, residuals, "sim3" if with_scale else "se3")


def _check_mode(mode: str) -> bool:
    if mode not in ("se3", "sim3"):
        raise ValidationError(f"alignment mode must be 'se3' or 'sim3', got {mode!r}")
    return mode == "sim3"


def ate_rmse(est: Trajectory, ref: Trajectory, mode: str = "sim3") -> float:
    return umeyama_align(est, ref, _check_mode(mode)).rmse


def aligned_errors(est: Trajectory, ref: Trajectory, mode: str = "sim3") -> tuple[list[int], np.ndarray]:
    """Per-frame translation error after alignment (for plotting)."""
    res = umeyama_align(est, ref, _check_mode(mode))
    return _common(est, ref), res.residuals


def rpe(est: Trajectory, ref: Trajectory, delta: int = 1) -> tuple[float, float]:
    """Relative pose error ``(translation m, rotation deg)`` over frame pairs ``delta`` apart."""
    if delta < 1:
        raise ValidationError("rpe delta must be >= 1")
    frames = set(_common(est, ref))
    pairs = [(f, f + delta) for f in sorted(frames) if f + delta in frames]
    if not pairs:
        raise InsufficientOverlapError(f"no frame pairs {delta} apart in common")
    trans, rot = [], []
    for i, j in pairs:
        rel_ref = compose_poses(invert_pose(ref.pose_at(i)), ref.pose_at(j))
        rel_est = compose_poses(invert_pose(est.pose_at(i)), est.pose_at(j))
        err = compose_poses(invert_pose(rel_ref), rel_est)
        trans.append(float(np.linalg.norm(err.translation)))
        rot.append(math.degrees(quat_angle(err.rotation)))
    return float(np.sqrt(np.mean(np.square(trans)))), float(np.sqrt(np.mean(np.square(rot))))


def trajectory_metrics(est: Trajectory, ref: Trajectory, mode: str = "sim3", delta: int = 1) -> TrajectoryMetrics:
    tr, rot = rpe(est, ref, delta)
    return TrajectoryMetrics(ate_rmse(est, ref, mode), tr, rot, delta)


# ---------------------------------------------------------------------------
# PnP
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class FrameObservations:
    track_ids: np.ndarray
    pixels: np.ndarray
    landmarks: np.ndarray

    def __post_init__(self):
        self.track_ids = np.asarray(self.track_ids, dtype=np.int64).reshape(-1)
        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64).reshape(-1, 3)
        if not (len(self.track_ids) == len(self.pixels) == len(self.landmarks)):
            raise ValidationError("observation arrays differ in length")

    def __len__(self):
        return len(self.track_ids)

    def subset(self, keep) -> FrameObservations:
        keep = np.asarray(keep, dtype=bool)
        return FrameObservations(self.track_ids[keep], self.pixels[keep], self.landmarks[keep])


@dataclass(eq=False)
class ObservationSet:
    """Per-frame 2-D/3-D correspondences, plus the timestamps of those frames."""

    frames: dict[int, FrameObservations]
    timestamps: dict[int, float] = field(default_factory=dict)


def _reproject(k: CameraIntrinsics, r, t, pts):
    xc = pts @ r.T + t
    z = xc[:, 2]
    uv = np.stack([k.fx * xc[:, 0] / z + k.cx, k.fy * xc[:, 1] / z + k.cy], axis=1)
    return uv, xc


def reprojection_rmse(k: CameraIntrinsics, cam_from_world: Pose, obs: FrameObservations) -> float:
    uv, _ = _reproject(k, cam_from_world.rotation_matrix, cam_from_world.translation, obs.landmarks)
    return float(np.sqrt(np.mean(np.sum((uv - obs.pixels) ** 2, axis=1))))


def _dlt_pose(k: CameraIntrinsics, obs: FrameObservations) -> tuple[np.ndarray, np.ndarray]:
    """Linear camera-from-world estimate from normalised image coordinates."""
    x = (obs.pixels - [k.cx, k.cy]) / [k.fx, k.fy]
    pts = obs.landmarks
    centre = pts.mean(axis=0)
    spread = max(float(np.sqrt(np.mean(np.sum((pts - centre) ** 2, axis=1)))), 1e-12)
    pn = (pts - centre) / spread
    n = len(pts)
    a = np.zeros((2 * n, 12))
    hom = np.hstack([pn, np.ones((n, 1))])
    a[0::2, 0:4] = hom
    a[0::2, 8:12] = -x[:, :1] * hom
    a[1::2, 4:8] = hom
    a[1::2, 8:12] = -x[:, 1:] * hom
    p = np.linalg.svd(a)[2][-1].reshape(3, 4)
    # P is only known up to sign; the rotation block must have det > 0
    if np.linalg.det(p[:, :3]) < 0:
        p = -p
    u, d, vt = np.linalg.svd(p[:, :3])
    r = u @ vt
    t = p[:, 3] / d.mean()
    # X_c = R (X - c) / s + t, scaled back to metric units by s
    return r, spread * t - r @ centre


def _gn_refine(k, r, t, obs: FrameObservations, max_iter: int = 100, tol: float = 1e-10):
    pts, target = obs.landmarks, obs.pixels

    def cost_of(r_, t_):
        uv, xc = _reproject(k, r_, t_, pts)
        if np.any(xc[:, 2] <= 0):
            return math.inf, uv, xc
        return float(np.sum((uv - target) ** 2)), uv, xc

    cost, uv, xc = cost_of(r, t)
    mu = 1e-3
    for _ in range(max_iter):
        if not math.isfinite(cost):
            break
        x, y, z = xc[:, 0], xc[:, 1], xc[:, 2]
        du = np.zeros((len(pts), 2, 3))
        du[:, 0, 0] = k.fx / z
        du[:, 0, 2] = -k.fx * x / z**2
        du[:, 1, 1] = k.fy / z
        du[:, 1, 2] = -k.fy * y / z**2
        # left perturbation: d(xc) = -[xc]x dw + dv
        dxc = np.concatenate([-np.array([skew(p) for p in xc]), np.broadcast_to(np.eye(3), (len(pts), 3, 3))], axis=2)
        jac = np.einsum("nij,njk->nik", du, dxc).reshape(-1, 6)
        res = (uv - target).reshape(-1)
        h = jac.T @ jac
        g = jac.T @ res
        accepted = False
        for _inner in range(30):
            try:
                step = -np.linalg.solve(h + mu * np.diag(np.diag(h) + 1e-12), g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            dr = rotvec_to_matrix(step[:3])
            r_new, t_new = dr @ r, dr @ t + step[3:]
            new_cost, new_uv, new_xc = cost_of(r_new, t_new)
            if new_cost <= cost:
                r, t, cost, uv, xc = r_new, t_new, new_cost, new_uv, new_xc
                mu = max(mu / 10.0, 1e-12)
                accepted = True
                break
            mu *= 10.0
        if not accepted or np.linalg.norm(step) < tol:
            break
    return r, t


def estimate_pose_pnp(obs: FrameObservations, k: CameraIntrinsics) -> Pose:
    """Camera-from-world pose minimising reprojection error for one frame."""
    if len(obs) < MIN_PNP_OBSERVATIONS:
        raise TooFewObservationsError(f"{len(obs)} observation(s); PnP needs at least {MIN_PNP_OBSERVATIONS}")
    r0, t0 = _dlt_pose(k, obs)
    init = reprojection_rmse(k, Pose(quat_from_matrix(r0), t0), obs)
    r, t = _gn_refine(k, r0, t0, obs)
    pose = Pose(quat_from_matrix(r), t)
    final = reprojection_rmse(k, pose, obs)
    if not math.isfinite(final) or (math.isfinite(init) and final > 10.0 * init and final > 1e-9):
        raise SolverDivergedError(f"reprojection error grew from {init:.3g} to {final:.3g} px")
    return pose


def estimate_trajectory_pnp(obs: ObservationSet, k: CameraIntrinsics) -> Trajectory:
    """World-from-camera trajectory from independent per-frame PnP solves."""
    frames = sorted(obs.frames)
    poses = []
    for f in frames:
        try:
            poses.append(invert_pose(estimate_pose_pnp(obs.frames[f], k)))
        except TooFewObservationsError as exc:
            raise TooFewObservationsError(f"frame {f}: {exc}") from None
    stamps = [obs.timestamps.get(f, float(f)) for f in frames]
    return Trajectory(tuple(frames), tuple(poses), tuple(stamps))


# ---------------------------------------------------------------------------
# masked vs unmasked
# ---------------------------------------------------------------------------


def build_observations(scene) -> ObservationSet:
    """Correspondences from every visible track.

    Points on moving objects are assigned their frame-0 world position, as
    a tracker that believed them static would.
    """
    frames = {}
    ids = np.array([tr.track_id for tr in scene.tracks])
    dynamic = np.asarray(scene.gt_dynamic_labels, dtype=bool)
    assumed = np.where(dynamic[:, None], scene.landmarks[:, 0, :], scene.landmarks[:, -1, :])
    for t in range(scene.num_frames):
        vis = np.array([tr.visible[t] for tr in scene.tracks])
        pix = np.array([tr.positions[t] for tr in scene.tracks])
        frames[t] = FrameObservations(ids[vis], pix[vis], assumed[vis])
    stamps = dict(zip(scene.gt_trajectory.frames, scene.gt_trajectory.timestamps))
    return ObservationSet(frames, stamps)


def apply_masks(obs: ObservationSet, masks: Mapping[int, ObjectMask]) -> ObservationSet:
    out = {}
    for t, fo in obs.frames.items():
        m = masks.get(t)
        out[t] = fo if m is None else fo.subset(~masked_point_flags(fo.pixels, m))
    return ObservationSet(out, dict(obs.timestamps))


@dataclass(frozen=True)
class MaskingComparison:
    unmasked: TrajectoryMetrics
    masked: TrajectoryMetrics
    unmasked_trajectory: Trajectory
    masked_trajectory: Trajectory
    unmasked_errors: np.ndarray
    masked_errors: np.ndarray

    @staticmethod
    def _gain(before: float, after: float) -> float:
        return 0.0 if before == 0 else (before - after) / before

    @property
    def ate_improvement(self) -> float:
        """Relative ATE reduction of the masked run (0.4 == 40 %)."""
        return self._gain(self.unmasked.ate_rmse, self.masked.ate_rmse)

    @property
    def rpe_trans_improvement(self) -> float:
        return self._gain(self.unmasked.rpe_trans, self.masked.rpe_trans)

    @property
    def rpe_rot_improvement(self) -> float:
        return self._gain(self.unmasked.rpe_rot, self.masked.rpe_rot)


def compare_masked_vs_unmasked(scene, masks: Mapping[int, ObjectMask] | Sequence[ObjectMask],
                               k: CameraIntrinsics | None = None, mode: str = "sim3",
                               delta: int = 1) -> MaskingComparison:
    k = k or scene.intrinsics
    if not isinstance(masks, Mapping):
        masks = {m.t: m for m in masks}
    missing = [t for t in range(scene.num_frames) if t not in masks]
    if missing:
        raise ValidationError(f"no mask for frame(s) {missing}")
    ref = scene.gt_trajectory
    obs = build_observations(scene)
    unmasked = estimate_trajectory_pnp(obs, k)
    masked = estimate_trajectory_pnp(apply_masks(obs, masks), k)
    return MaskingComparison(
        trajectory_metrics(unmasked, ref, mode, delta),
        trajectory_metrics(masked, ref, mode, delta),
        unmasked,
        masked,
        aligned_errors(unmasked, ref, mode)[1],
        aligned_errors(masked, ref, mode)[1],
    )


def oracle_masks(scene, margin: float = 0.0) -> dict[int, ObjectMask]:
    """Masks rasterised from the ground-truth moving-object detections, dilated by ``margin`` px."""
    from .objects import BoxDynamics, BoxSegmenter, FilteredBoxSet, rasterize_masks

    k = scene.intrinsics
    out = {}
    for t, boxes in enumerate(scene.detections):
        moving = tuple(BoxDynamics(b, 0, 0.0) for b in boxes if b.gt_moving)
        fs = FilteredBoxSet(t, 1.0, moving, tuple(range(len(moving))))
        out[t] = rasterize_masks(fs, k.width, k.height, BoxSegmenter(margin))
    return out
