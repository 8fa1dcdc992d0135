"""Run configuration: a strict JSON document with four optional sections.

.. code-block:: json

    {"seed": 0,
     "scene": {"num_frames": 12, "moving_objects": [...], "camera_path": {...}},
     "dynamic": {"lambda": 1.0, "flow_scale": 1.5, "theta_min": 0.5,
                 "p_min": 0.5, "grid_k": 4, "feature_dim": 8},
     "filter": {"tau_0": 5, "mask_margin": 2.0},
     "eval": {"align": "sim3", "rpe_delta": 1}}

Omitted keys take their defaults; unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .dynamic import DynamicConfig
from .errors import SchemaError, ValidationError
from .formats import _fields, _int, _list, _num, _vec, intrinsics_from_json, intrinsics_to_json, load_json
from .geometry import Pose
from .scene import CameraPath, ObjectSpec, SceneConfig, pedestrian


@dataclass(frozen=True)
class FilterConfig:
    tau_0: float = 5.0
    # dilation of each kept box before rasterising, in pixels
    mask_margin: float = 2.0

    def __post_init__(self):
        if not self.tau_0 > 0:
            raise ValidationError(f"tau_0 must be > 0, got {self.tau_0!r}")
        if not self.mask_margin >= 0:
            raise ValidationError(f"mask_margin must be >= 0, got {self.mask_margin!r}")


@dataclass(frozen=True)
class EvalConfig:
    align: str = "sim3"
    rpe_delta: int = 1

    def __post_init__(self):
        if self.align not in ("se3", "sim3"):
            raise ValidationError(f"align must be 'se3' or 'sim3', got {self.align!r}")
        if self.rpe_delta < 1:
            raise ValidationError(f"rpe_delta must be >= 1, got {self.rpe_delta}")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    scene: SceneConfig = field(default_factory=lambda: SceneConfig(moving_objects=(pedestrian(),)))
    dynamic: DynamicConfig = field(default_factory=DynamicConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if not 0 <= self.seed < 2**63:
            raise ValidationError(f"seed must be in [0, 2^63), got {self.seed}")
        # the scene follows the run seed and the anchor grid / feature size used for scoring
        synced = replace(self.scene, seed=self.seed, grid_k=self.dynamic.grid_k, feature_dim=self.dynamic.feature_dim)
        if synced != self.scene:
            object.__setattr__(self, "scene", synced)

    def with_seed(self, seed: int) -> PipelineConfig:
        return replace(self, seed=seed)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_SCENE_SCALARS = {
    "num_frames": "int", "num_static_points": "int", "track_noise_sigma": "num", "flow_noise_sigma": "num",
    "detector_box_jitter": "num", "fps": "num", "num_distractors": "int", "distractor_point_count": "int",
}


def _pose_from(d: Any, where: str) -> Pose:
    d = _fields(d, where, (), {"rotation", "translation"})
    rot = _vec(d.get("rotation", [0.0, 0.0, 0.0, 1.0]), 4, f"{where}.rotation")
    tr = _vec(d.get("translation", [0.0, 0.0, 0.0]), 3, f"{where}.translation")
    return Pose(rot, tr)


def _object_from(d: Any, where: str) -> ObjectSpec:
    d = _fields(d, where, {"box_dims"},
                {"initial_pose", "velocity", "angular_velocity", "surface_point_count", "class_id"})
    kw = {"box_dims": tuple(_vec(d["box_dims"], 3, f"{where}.box_dims"))}
    if "initial_pose" in d:
        kw["initial_pose"] = _pose_from(d["initial_pose"], f"{where}.initial_pose")
    for key in ("velocity", "angular_velocity"):
        if key in d:
            kw[key] = tuple(_vec(d[key], 3, f"{where}.{key}"))
    if "surface_point_count" in d:
        kw["surface_point_count"] = _int(d["surface_point_count"], f"{where}.surface_point_count")
    if "class_id" in d:
        kw["class_id"] = _int(d["class_id"], f"{where}.class_id", 0)
    return ObjectSpec(**kw)


def _camera_from(d: Any, where: str) -> CameraPath:
    d = _fields(d, where, (), {"kind", "speed", "direction", "arc_radius", "jitter_rotation_deg", "jitter_translation"})
    kw = {}
    if "kind" in d:
        if not isinstance(d["kind"], str):
            raise SchemaError("expected a string", f"{where}.kind")
        kw["kind"] = d["kind"]
    for key in ("speed", "arc_radius", "jitter_rotation_deg", "jitter_translation"):
        if key in d:
            kw[key] = _num(d[key], f"{where}.{key}")
    if "direction" in d:
        kw["direction"] = tuple(_vec(d["direction"], 3, f"{where}.direction"))
    return CameraPath(**kw)


def _scene_from(d: Any, where: str) -> SceneConfig:
    d = _fields(d, where, (), {*_SCENE_SCALARS, "moving_objects", "camera_path", "intrinsics", "depth_range"})
    kw: dict[str, Any] = {}
    for key, kind in _SCENE_SCALARS.items():
        if key in d:
            kw[key] = _int(d[key], f"{where}.{key}") if kind == "int" else _num(d[key], f"{where}.{key}")
    if "moving_objects" in d:
        objs = _list(d["moving_objects"], f"{where}.moving_objects")
        kw["moving_objects"] = tuple(_object_from(o, f"{where}.moving_objects[{i}]") for i, o in enumerate(objs))
    else:
        kw["moving_objects"] = (pedestrian(),)
    if "camera_path" in d:
        kw["camera_path"] = _camera_from(d["camera_path"], f"{where}.camera_path")
    if "intrinsics" in d:
        kw["intrinsics"] = intrinsics_from_json(d["intrinsics"], f"{where}.intrinsics")
    if "depth_range" in d:
        kw["depth_range"] = tuple(_vec(d["depth_range"], 2, f"{where}.depth_range"))
    return SceneConfig(**kw)


def _dynamic_from(d: Any, where: str) -> DynamicConfig:
    d = _fields(d, where, (), {"lambda", "flow_scale", "theta_min", "p_min", "grid_k", "feature_dim", "match_radius"})
    kw = {}
    if "lambda" in d:
        kw["lam"] = _num(d["lambda"], f"{where}.lambda")
    for key in ("flow_scale", "theta_min", "p_min", "match_radius"):
        if key in d:
            kw[key] = _num(d[key], f"{where}.{key}")
    for key in ("grid_k", "feature_dim"):
        if key in d:
            kw[key] = _int(d[key], f"{where}.{key}")
    return DynamicConfig(**kw)


def _filter_from(d: Any, where: str) -> FilterConfig:
    d = _fields(d, where, (), {"tau_0", "mask_margin"})
    kw = {k: _num(v, f"{where}.{k}") for k, v in d.items()}
    return FilterConfig(**kw)


def _eval_from(d: Any, where: str) -> EvalConfig:
    d = _fields(d, where, (), {"align", "rpe_delta"})
    kw = {}
    if "align" in d:
        if not isinstance(d["align"], str):
            raise SchemaError("expected a string", f"{where}.align")
        kw["align"] = d["align"]
    if "rpe_delta" in d:
        kw["rpe_delta"] = _int(d["rpe_delta"], f"{where}.rpe_delta")
    return EvalConfig(**kw)


def config_from_dict(d: Any, where: str = "config") -> PipelineConfig:
    """Parse and validate; every error names the offending key path."""
    d = _fields(d, where, (), {"seed", "scene", "dynamic", "filter", "eval"})
    seed = _int(d.get("seed", 0), f"{where}.seed", 0)
    sections = (
        ("scene", _scene_from), ("dynamic", _dynamic_from), ("filter", _filter_from), ("eval", _eval_from),
    )
    kw: dict[str, Any] = {}
    for name, parse in sections:
        try:
            if name in d:
                kw[name] = parse(d[name], f"{where}.{name}")
            elif name == "scene":
                kw[name] = SceneConfig(moving_objects=(pedestrian(),), seed=seed)
        except SchemaError:
            raise
        except ValidationError as exc:
            raise SchemaError(str(exc), f"{where}.{name}") from None
    return PipelineConfig(seed=seed, **kw)


def load_config(path: str | Path) -> PipelineConfig:
    return config_from_dict(load_json(path), str(path))


# ---------------------------------------------------------------------------
# echo
# ---------------------------------------------------------------------------


def _pose_dict(p: Pose) -> dict:
    return {"rotation": p.rotation.tolist(), "translation": p.translation.tolist()}


def config_to_dict(cfg: PipelineConfig) -> dict:
    """Fully expanded form; ``config_from_dict(config_to_dict(c)) == c``."""
    s = cfg.scene
    cam = s.camera_path
    return {
        "seed": cfg.seed,
        "scene": {
            **{k: getattr(s, k) for k in _SCENE_SCALARS},
            "moving_objects": [
                {
                    "box_dims": list(o.box_dims),
                    "initial_pose": _pose_dict(o.initial_pose),
                    "velocity": list(o.velocity),
                    "angular_velocity": list(o.angular_velocity),
                    "surface_point_count": o.surface_point_count,
                    "class_id": o.class_id,
                }
                for o in s.moving_objects
            ],
            "camera_path": {
                "kind": cam.kind, "speed": cam.speed, "direction": list(cam.direction),
                "arc_radius": cam.arc_radius, "jitter_rotation_deg": cam.jitter_rotation_deg,
                "jitter_translation": cam.jitter_translation,
            },
            "intrinsics": intrinsics_to_json(s.intrinsics),
            "depth_range": list(s.depth_range),
        },
        "dynamic": dynamic_to_dict(cfg.dynamic),
        "filter": {"tau_0": cfg.filter.tau_0, "mask_margin": cfg.filter.mask_margin},
        "eval": {"align": cfg.eval.align, "rpe_delta": cfg.eval.rpe_delta},
    }


def dynamic_to_dict(c: DynamicConfig) -> dict:
    return {"lambda": c.lam, "flow_scale": c.flow_scale, "theta_min": c.theta_min, "p_min": c.p_min,
            "grid_k": c.grid_k, "feature_dim": c.feature_dim, "match_radius": c.match_radius}


__all__ = [
    "EvalConfig", "FilterConfig", "PipelineConfig", "config_from_dict", "config_to_dict",
    "dynamic_to_dict", "load_config",
]
