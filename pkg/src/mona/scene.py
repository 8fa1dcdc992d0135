"""Seeded synthetic dynamic scenes with exact ground truth.

The generator stands in for a real video plus the perception stack: it
emits point tracks (with visibility and per-track features), sparse optical
flow samples at tracked positions, detector boxes, and the ground-truth
camera trajectory and landmark positions needed to score everything
downstream.

World frame: x right, y down, z forward; frame 0 of a non-static camera
path starts at the origin looking down +z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dynamic import FlowSampleSet, GradientMap, PointTrack, select_anchor_points
from .errors import DegenerateSceneError, LastFrameError, ValidationError
from .geometry import (
    CameraIntrinsics,
    Pose,
    Trajectory,
    compose_poses,
    invert_pose,
    project_points,
    quat_from_rotvec,
    unproject_pixel,
)
from .objects import BoundingBox

CAMERA_PATHS = ("static", "linear", "arc", "jittered-linear")

# sub-stream tags for np.random.default_rng([seed, tag, ...])
_RNG_SCENE, _RNG_FLOW, _RNG_DETECT = 0, 1, 2


@dataclass(frozen=True)
class ObjectSpec:
    """Box-shaped object; ``initial_pose`` is world-from-object at t=0, box centred on the origin."""

    box_dims: tuple[float, float, float]
    initial_pose: Pose = field(default_factory=Pose)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    angular_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    surface_point_count: int = 60
    class_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "box_dims", tuple(float(x) for x in self.box_dims))
        object.__setattr__(self, "velocity", tuple(float(x) for x in self.velocity))
        object.__setattr__(self, "angular_velocity", tuple(float(x) for x in self.angular_velocity))
        if len(self.box_dims) != 3 or min(self.box_dims) <= 0:
            raise ValidationError("box_dims must be three positive lengths")
        if len(self.velocity) != 3 or len(self.angular_velocity) != 3:
            raise ValidationError("velocity and angular_velocity must be 3-vectors")
        if self.surface_point_count < 4:
            raise ValidationError("surface_point_count must be >= 4")

    def pose_at(self, time: float) -> Pose:
        spin = Pose.from_rotvec(np.asarray(self.angular_velocity) * time)
        moved = compose_poses(spin, Pose(self.initial_pose.rotation, (0.0, 0.0, 0.0)))
        return Pose(moved.rotation, self.initial_pose.translation + np.asarray(self.velocity) * time)

    @property
    def is_static(self) -> bool:
        return not (any(self.velocity) or any(self.angular_velocity))


@dataclass(frozen=True)
class CameraPath:
    kind: str = "jittered-linear"
    speed: float = 0.5
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    arc_radius: float = 10.0
    jitter_rotation_deg: float = 0.05
    jitter_translation: float = 0.005

    def __post_init__(self):
        if self.kind not in CAMERA_PATHS:
            raise ValidationError(f"camera path must be one of {CAMERA_PATHS}, got {self.kind!r}")
        if self.speed < 0 or self.arc_radius <= 0:
            raise ValidationError("camera speed must be >= 0 and arc_radius > 0")
        if self.jitter_rotation_deg < 0 or self.jitter_translation < 0:
            raise ValidationError("camera jitter must be >= 0")
        d = np.asarray(self.direction, dtype=np.float64)
        if d.shape != (3,) or np.linalg.norm(d) == 0:
            raise ValidationError("camera direction must be a non-zero 3-vector")
        object.__setattr__(self, "direction", tuple(float(x) for x in d / np.linalg.norm(d)))


@dataclass(frozen=True)
class SceneConfig:
    num_frames: int = 12
    num_static_points: int = 150
    moving_objects: tuple[ObjectSpec, ...] = ()
    camera_path: CameraPath = field(default_factory=CameraPath)
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
    )
    track_noise_sigma: float = 0.5
    flow_noise_sigma: float = 0.2
    detector_box_jitter: float = 2.0
    seed: int = 0
    fps: float = 10.0
    depth_range: tuple[float, float] = (5.0, 15.0)
    num_distractors: int = 2
    distractor_point_count: int = 20
    grid_k: int = 4
    feature_dim: int = 8

    def __post_init__(self):
        object.__setattr__(self, "moving_objects", tuple(self.moving_objects))
        object.__setattr__(self, "depth_range", tuple(float(x) for x in self.depth_range))
        if self.num_frames < 2:
            raise ValidationError(f"num_frames must be >= 2, got {self.num_frames}")
        if self.num_static_points < 8:
            raise ValidationError(f"num_static_points must be >= 8, got {self.num_static_points}")
        for name in ("track_noise_sigma", "flow_noise_sigma", "detector_box_jitter"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.fps <= 0:
            raise ValidationError("fps must be > 0")
        lo, hi = self.depth_range
        if not 0 < lo <= hi:
            raise ValidationError("depth_range must satisfy 0 < near <= far")
        if self.num_distractors < 0 or self.distractor_point_count < 4:
            raise ValidationError("num_distractors must be >= 0 and distractor_point_count >= 4")
        if self.grid_k < 1 or self.feature_dim < 1:
            raise ValidationError("grid_k and feature_dim must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")


@dataclass(eq=False)
class ScenePackage:
    """Everything a run needs: perception-like inputs plus ground truth.

    ``object_ids[i]`` is the index into ``objects`` that track i was generated
    on, or -1 for background structure. ``landmarks`` is (tracks, S, 3).
    """

    intrinsics: CameraIntrinsics
    gt_trajectory: Trajectory
    tracks: list[PointTrack]
    gt_dynamic_labels: list[bool]
    object_ids: list[int]
    landmarks: np.ndarray
    flow: list[FlowSampleSet] = field(default_factory=list)
    detections: list[list[BoundingBox]] = field(default_factory=list)
    config: SceneConfig | None = None
    objects: tuple[ObjectSpec, ...] = ()

    @property
    def num_frames(self) -> int:
        return len(self.gt_trajectory)

    @property
    def anchors(self) -> list[PointTrack]:
        return [t for t in self.tracks if t.is_anchor]

    @property
    def detection_tracks(self) -> list[PointTrack]:
        return [t for t in self.tracks if not t.is_anchor]

    def labels_for(self, tracks: Sequence[PointTrack]) -> list[bool]:
        lut = {t.track_id: lab for t, lab in zip(self.tracks, self.gt_dynamic_labels)}
        return [lut[t.track_id] for t in tracks]


# ---------------------------------------------------------------------------
# camera and objects
# ---------------------------------------------------------------------------


def camera_poses(cfg: SceneConfig, rng: np.random.Generator) -> list[Pose]:
    """World-from-camera pose per frame."""
    path = cfg.camera_path
    poses = []
    for i in range(cfg.num_frames):
        time = i / cfg.fps
        if path.kind == "static":
            pose = Pose()
        elif path.kind == "arc":
            theta = path.speed * time / path.arc_radius
            r = path.arc_radius
            pose = Pose.from_rotvec((0.0, -theta, 0.0), (r * math.sin(theta), 0.0, r - r * math.cos(theta)))
        else:
            pose = Pose(translation=np.asarray(path.direction) * path.speed * time)
        if path.kind == "jittered-linear" and i > 0:
            rot = rng.normal(0.0, math.radians(path.jitter_rotation_deg), 3)
            trans = rng.normal(0.0, path.jitter_translation, 3)
            pose = Pose(compose_poses(pose, Pose.from_rotvec(rot)).rotation, pose.translation + trans)
        poses.append(pose)
    return poses


def sample_box_surface(dims, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on the faces of an origin-centred box, shape (n, 3)."""
    half = 0.5 * np.asarray(dims, dtype=np.float64)
    ax, ay, az = dims
    face_areas = np.array([ay * az, ay * az, ax * az, ax * az, ax * ay, ax * ay])
    faces = rng.choice(6, size=n, p=face_areas / face_areas.sum())
    pts = rng.uniform(-half, half, size=(n, 3))
    axis = faces // 2
    sign = np.where(faces % 2 == 0, -1.0, 1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    return pts


def _box_corners(dims) -> np.ndarray:
    half = 0.5 * np.asarray(dims, dtype=np.float64)
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    return signs * half


def _hull_boxes(spec: ObjectSpec, cams: Sequence[Pose], k: CameraIntrinsics, times) -> list:
    """Unjittered image hull of the object's corners per frame (None if any corner is behind)."""
    corners = _box_corners(spec.box_dims)
    out = []
    for cam, time in zip(cams, times):
        world = spec.pose_at(time).apply(corners)
        px, z = project_points(k, invert_pose(cam), world)
        if np.any(z <= 0):
            out.append(None)
        else:
            out.append((px[:, 0].min(), px[:, 1].min(), px[:, 0].max(), px[:, 1].max()))
    return out


def _overlap(a, b, margin: float) -> bool:
    if a is None or b is None:
        return False
    return not (a[2] + margin < b[0] or b[2] + margin < a[0] or a[3] + margin < b[1] or b[3] + margin < a[1])


def _place_distractors(cfg: SceneConfig, cams, times, rng) -> list[ObjectSpec]:
    """Parked-object analogs whose image footprints never meet a moving object's.

    Inter-object occlusion is not modelled, so overlapping placements are
    rejected rather than rendered inconsistently.
    """
    k = cfg.intrinsics
    taken = [_hull_boxes(o, cams, k, times) for o in cfg.moving_objects]
    out = []
    lo, hi = cfg.depth_range
    for _ in range(cfg.num_distractors):
        for _attempt in range(100):
            dims = (rng.uniform(0.6, 2.0), rng.uniform(0.8, 1.6), rng.uniform(0.6, 2.0))
            pixel = (rng.uniform(0, k.width), rng.uniform(0, k.height))
            depth = rng.uniform(lo, min(hi, lo + 0.6 * (hi - lo)))
            center = unproject_pixel(k, invert_pose(cams[0]), pixel, depth)
            spec = ObjectSpec(dims, Pose(translation=center), surface_point_count=cfg.distractor_point_count,
                              class_id=2)
            hulls = _hull_boxes(spec, cams, k, times)
            h0 = hulls[0]
            if h0 is None or h0[0] < 0 or h0[1] < 0 or h0[2] >= k.width or h0[3] >= k.height:
                continue
            if any(_overlap(h, o[f], 8.0) for o in taken for f, h in enumerate(hulls)):
                continue
            taken.append(hulls)
            out.append(spec)
            break
    return out


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def generate_scene(config: SceneConfig) -> ScenePackage:
    """Build a deterministic scene package from ``config`` (including its seed)."""
    cfg = config
    k = cfg.intrinsics
    s = cfg.num_frames
    rng = np.random.default_rng([cfg.seed, _RNG_SCENE])
    times = [i / cfg.fps for i in range(s)]
    cams = camera_poses(cfg, rng)
    cam0_inv = invert_pose(cams[0])
    lo, hi = cfg.depth_range

    distractors = _place_distractors(cfg, cams, times, rng) if cfg.moving_objects else []
    objects = tuple(cfg.moving_objects) + tuple(distractors)
    n_moving = len(cfg.moving_objects)

    # each source: (object id or -1, (S, 3) world positions, is_anchor)
    sources: list[tuple[int, np.ndarray, bool]] = []

    for _ in range(cfg.num_static_points):
        pixel = (rng.uniform(0, k.width), rng.uniform(0, k.height))
        p = unproject_pixel(k, cam0_inv, pixel, rng.uniform(lo, hi))
        sources.append((-1, np.tile(p, (s, 1)), False))

    for oid, spec in enumerate(objects):
        local = sample_box_surface(spec.box_dims, spec.surface_point_count, rng)
        world = np.stack([spec.pose_at(tm).apply(local) for tm in times], axis=1)
        for w in world:
            sources.append((oid, w, False))

    hull0 = [_hull_boxes(o, cams[:1], k, times[:1])[0] for o in cfg.moving_objects]
    gmap = GradientMap(rng.random((k.height, k.width)))
    for x, y in select_anchor_points(gmap, cfg.grid_k):
        pixel = (x + 0.5, y + 0.5)
        host = next((i for i, h in enumerate(hull0)
                     if h is not None and h[0] <= pixel[0] <= h[2] and h[1] <= pixel[1] <= h[3]), None)
        if host is None:
            p = unproject_pixel(k, cam0_inv, pixel, rng.uniform(lo, hi))
            sources.append((-1, np.tile(p, (s, 1)), True))
        else:
            spec = objects[host]
            pose0 = spec.pose_at(0.0)
            depth = float(cam0_inv.apply(pose0.translation)[2])
            local = invert_pose(pose0).apply(unproject_pixel(k, cam0_inv, pixel, depth))
            world = np.stack([spec.pose_at(tm).apply(local) for tm in times])
            sources.append((host, world, True))

    tracks, labels, oids, landmarks = [], [], [], []
    cam_inv = [invert_pose(c) for c in cams]
    for oid, world, is_anchor in sources:
        proj = np.empty((s, 2))
        vis = np.zeros(s)
        for i in range(s):
            px, z = project_points(k, cam_inv[i], world[i])
            proj[i] = px[0]
            vis[i] = float(z[0] > 0 and bool(k.in_image(px[0])))
        noise = rng.normal(0.0, cfg.track_noise_sigma, (s, 2)) if cfg.track_noise_sigma > 0 else np.zeros((s, 2))
        feat = rng.standard_normal(cfg.feature_dim) / math.sqrt(cfg.feature_dim)
        if not vis.any():
            continue
        obs = proj + noise
        first = int(np.argmax(vis > 0))
        held = obs[first].copy()
        for i in range(s):
            if vis[i] > 0:
                held = obs[i]
            else:
                obs[i] = held
        tid = len(tracks)
        tracks.append(PointTrack(tid, first, obs, vis, np.tile(feat[:, None], (1, s)), is_anchor))
        labels.append(0 <= oid < n_moving)
        oids.append(oid)
        landmarks.append(world)

    if not tracks:
        raise DegenerateSceneError("no point is ever visible")
    traj = Trajectory(tuple(range(s)), tuple(cams), tuple(times))
    pkg = ScenePackage(k, traj, tracks, labels, oids, np.array(landmarks), config=cfg, objects=objects)
    pkg.flow = [synth_flow(pkg, t) for t in range(s - 1)]
    pkg.detections = [synth_detections(pkg, t) for t in range(s)]
    return pkg


def _projections(scene: ScenePackage, t: int) -> tuple[np.ndarray, np.ndarray]:
    cam = invert_pose(scene.gt_trajectory.poses[t])
    px, z = project_points(scene.intrinsics, cam, scene.landmarks[:, t, :])
    ok = (z > 0) & scene.intrinsics.in_image(np.nan_to_num(px, nan=-1.0))
    return px, ok


def synth_flow(scene: ScenePackage, t: int, noise_sigma: float | None = None) -> FlowSampleSet:
    """Flow samples at tracked positions for the frame pair (t, t+1).

    The flow vector is the exact landmark-projection difference plus
    Gaussian noise; the sample position is the track's reported position.
    """
    s = scene.num_frames
    if t == s - 1:
        raise LastFrameError(f"frame {t} is the last frame; flow needs t+1")
    if not 0 <= t < s - 1:
        raise LastFrameError(f"frame {t} outside [0, {s - 2}]")
    if noise_sigma is None:
        noise_sigma = scene.config.flow_noise_sigma if scene.config else 0.0
    seed = scene.config.seed if scene.config else 0
    rng = np.random.default_rng([seed, _RNG_FLOW, t])
    p0, ok0 = _projections(scene, t)
    p1, ok1 = _projections(scene, t + 1)
    vis = np.array([tr.visible[t] and tr.visible[t + 1] for tr in scene.tracks])
    sel = np.flatnonzero(vis & ok0 & ok1)
    flows = p1[sel] - p0[sel]
    if noise_sigma > 0:
        flows = flows + rng.normal(0.0, noise_sigma, flows.shape)
    pos = np.array([scene.tracks[i].positions[t] for i in sel]).reshape(-1, 2)
    return FlowSampleSet(t, pos, flows)


def synth_detections(scene: ScenePackage, t: int, jitter: float | None = None) -> list[BoundingBox]:
    """Detector output at frame t: one jittered hull box per visible object.

    Each side of the tight hull is pushed outward by a half-normal amount,
    so boxes are loose but never cut into the object.
    """
    if not 0 <= t < scene.num_frames:
        raise ValidationError(f"frame {t} out of range")
    if jitter is None:
        jitter = scene.config.detector_box_jitter if scene.config else 0.0
    seed = scene.config.seed if scene.config else 0
    rng = np.random.default_rng([seed, _RNG_DETECT, t])
    k = scene.intrinsics
    px, ok = _projections(scene, t)
    oids = np.asarray(scene.object_ids)
    surface = np.array([not tr.is_anchor for tr in scene.tracks])
    boxes = []
    for oid, spec in enumerate(scene.objects):
        sel = (oids == oid) & surface & ok
        slack = np.abs(rng.normal(0.0, jitter, 4)) if jitter > 0 else np.zeros(4)
        score = float(rng.uniform(0.5, 1.0))
        if sel.sum() < 2:
            continue
        pts = px[sel]
        x0, y0 = pts.min(axis=0) - slack[:2]
        x1, y1 = pts.max(axis=0) + slack[2:]
        x0, x1 = max(x0, 0.0), min(x1, float(k.width))
        y0, y1 = max(y0, 0.0), min(y1, float(k.height))
        if not (x0 < x1 and y0 < y1):
            continue
        boxes.append(BoundingBox(t, float(x0), float(y0), float(x1), float(y1), spec.class_id, score,
                                 oid < len(scene.config.moving_objects) if scene.config else not spec.is_static))
    return boxes


# ---------------------------------------------------------------------------
# canned configurations
# ---------------------------------------------------------------------------


def pedestrian(depth: float = 7.0, x0: float = -1.4, speed: float = 3.0, points: int = 70) -> ObjectSpec:
    """A person-sized box walking parallel to the image plane on a ground 1.5 m below the camera."""
    dims = (0.8, 1.8, 0.8)
    return ObjectSpec(dims, Pose(translation=(x0, 1.5 - 0.5 * dims[1], depth)), (speed, 0.0, 0.0),
                      surface_point_count=points, class_id=0)


def standard_config(seed: int = 0) -> SceneConfig:
    """Benchmark scene: jittered lateral camera, one pedestrian, two parked distractors."""
    return SceneConfig(moving_objects=(pedestrian(),), seed=seed)


def with_seed(cfg: SceneConfig, seed: int) -> SceneConfig:
    return replace(cfg, seed=seed)
