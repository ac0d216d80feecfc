"""angkit: joint/bone/angle skeleton features and a small ST-GCN on top.

The toolkit computes first-order (joint coordinate), second-order (bone
vector), and third-order (1 - cos angle) features from 3D skeleton
sequences, and trains a compact spatial-temporal graph convolutional
classifier on any concatenation of them, in static or velocity form.
"""
from .core_types import (
    AngleDef,
    Clip,
    FeatureTensor,
    SkeletonTopology,
    flatten_index,
    kinect25,
    load_schema,
    parse_schema,
)
from .encoders import (
    angular_features,
    bone_features,
    encode_features,
    fuse_concat,
    joint_features,
    static_angle,
    temporal_difference,
)
from .ntu_io import normalize_clip, parse_skeleton_file, read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [
    "AngleDef",
    "Clip",
    "FeatureTensor",
    "SkeletonTopology",
    "angular_features",
    "bone_features",
    "encode_features",
    "flatten_index",
    "fuse_concat",
    "joint_features",
    "kinect25",
    "load_schema",
    "normalize_clip",
    "parse_schema",
    "parse_skeleton_file",
    "read_tensor",
    "static_angle",
    "temporal_difference",
    "write_tensor",
]
