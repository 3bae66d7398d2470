from .dataset import (
    Dataset,
    Frame,
    SceneConfig,
    Split,
    build_dataset,
    compute_mean_colors,
    load_dataset,
    write_dataset,
)
from .garment import GarmentConfig, garment_frame, generate_garment_frame, root_velocity_history
from .motion import MotionConfig, generate_motion
from .render import BACKGROUND, BODY, GARMENT, Materials, SceneObject, render_ground_truth
from .rig import CameraRig, make_camera_rig

__all__ = [
    "BACKGROUND",
    "BODY",
    "GARMENT",
    "CameraRig",
    "Dataset",
    "Frame",
    "GarmentConfig",
    "Materials",
    "MotionConfig",
    "SceneConfig",
    "SceneObject",
    "Split",
    "build_dataset",
    "compute_mean_colors",
    "garment_frame",
    "generate_garment_frame",
    "generate_motion",
    "load_dataset",
    "make_camera_rig",
    "render_ground_truth",
    "root_velocity_history",
    "write_dataset",
]
