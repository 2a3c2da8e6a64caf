"""Weakly-supervised geometry-aware 3D pose representation.

Skeleton-map view synthesis with a rotatable 3D-point latent code, a
representation-consistency constraint, downstream latent-to-pose
regression, and a synthetic multi-view benchmark with full evaluation.
"""

from .geometry import (
    Camera,
    Pose3D,
    Rotation3,
    TorusSampler,
    procrustes_align,
    project,
    rotation_between,
    sample_virtual_camera,
    triangulate,
)
from .model import LatentCode, normalize_latent, rotate_latent
from .skeleton import (
    Heatmaps,
    Keypoints2D,
    KinematicTree,
    SkeletonMap,
    decode_heatmaps,
    default_human_tree,
    rasterize_skeleton,
    skeleton_iou,
)
from .synthdata import DataConfig, DatasetReader, ViewPair, generate_dataset

__all__ = [
    "Camera",
    "DataConfig",
    "DatasetReader",
    "Heatmaps",
    "Keypoints2D",
    "KinematicTree",
    "LatentCode",
    "Pose3D",
    "Rotation3",
    "SkeletonMap",
    "TorusSampler",
    "ViewPair",
    "decode_heatmaps",
    "default_human_tree",
    "generate_dataset",
    "normalize_latent",
    "procrustes_align",
    "project",
    "rasterize_skeleton",
    "rotate_latent",
    "rotation_between",
    "sample_virtual_camera",
    "skeleton_iou",
    "triangulate",
]
