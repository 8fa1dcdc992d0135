"""Moving-object masking for visual odometry, at desk scale.

Point tracks are scored against a heavy-tailed model of camera-induced
motion built from static anchor tracks, confirmed with optical flow, and
used to keep only the detector boxes that really contain moving objects.
The kept boxes become masks that remove moving-object correspondences
before pose estimation.
"""

__version__ = "0.1.0"

from .dynamic import (  # noqa: E402
    DynamicConfig,
    DynamicScore,
    FlowSampleSet,
    PointTrack,
    TrajectoryDistribution,
    build_scale_matrix,
    cauchy_log_density,
    classify_dynamic_points,
    dynamic_probability,
    estimate_camera_motion_prior,
)
from .evaluation import ate_rmse, compare_masked_vs_unmasked, estimate_pose_pnp, rpe, umeyama_align  # noqa: E402
from .geometry import CameraIntrinsics, Pose, SimilarityTransform, Trajectory  # noqa: E402
from .objects import BoundingBox, FilteredBoxSet, ObjectMask, filter_boxes, rasterize_masks  # noqa: E402
from .scene import SceneConfig, generate_scene, standard_config  # noqa: E402

__all__ = [
    "BoundingBox", "CameraIntrinsics", "DynamicConfig", "DynamicScore", "FilteredBoxSet", "FlowSampleSet",
    "ObjectMask", "PointTrack", "Pose", "SceneConfig", "SimilarityTransform", "Trajectory",
    "TrajectoryDistribution", "ate_rmse", "build_scale_matrix", "cauchy_log_density", "classify_dynamic_points",
    "compare_masked_vs_unmasked", "dynamic_probability", "estimate_camera_motion_prior", "estimate_pose_pnp",
    "filter_boxes", "generate_scene", "rasterize_masks", "rpe", "standard_config", "umeyama_align",
]
