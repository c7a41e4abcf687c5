"""One-shot geometric affordance detection for 3D point-cloud scenes.

Train a sparse interaction descriptor from a single example of two objects
interacting, then detect candidate locations and orientations for that
interaction in novel scenes. Everything operates on plain point clouds; no
meshes, semantics, or learning corpora are involved.
"""

from .config import Config, build_config, load_config
from .detection import (
    Detection,
    DetectionParams,
    batch_detect,
    detect,
    detections_document,
    full_tensor_score,
    match_radius_scale,
    run_batch,
    sample_test_points,
    score_at,
)
from .errors import (
    AffordError,
    AllPruned,
    ConfigError,
    DegenerateInteraction,
    EmptyCloud,
    EmptyInput,
    EmptyTensor,
    InvalidCount,
    InvalidDims,
    InvalidPose,
    IoFailure,
    MalformedDescriptor,
    MalformedFile,
    NoDescriptors,
    NonFiniteData,
    NonPositiveLeaf,
    UnknownArchetype,
    VersionMismatch,
)
from .geometry import (
    PointCloud,
    RigidPose,
    SceneIndex,
    build_index,
    nearest,
    transform,
    voxel_downsample,
    yaw_matrix,
)
from .ibs import IbsParams, IbsSamples, prune_ibs, sample_ibs, sampling_domain
from .ply import load_ply, save_ply
from .synth import (
    LabeledScene,
    TableParams,
    make_primitive,
    make_table_scene,
    make_training_pair,
)
from .tensor import (
    AffordanceDescriptor,
    InteractionTensor,
    Keypoint,
    compute_provenance,
    derive_anchor,
    descriptor_document,
    load_descriptor,
    sample_keypoints,
    save_descriptor,
    train_affordance,
    train_report,
)
from .viz import export_detections_ply, export_ibs_ply, query_template

__version__ = "0.1.0"

__all__ = [
    "AffordError",
    "AffordanceDescriptor",
    "AllPruned",
    "Config",
    "ConfigError",
    "DegenerateInteraction",
    "Detection",
    "DetectionParams",
    "EmptyCloud",
    "EmptyInput",
    "EmptyTensor",
    "IbsParams",
    "IbsSamples",
    "InteractionTensor",
    "InvalidCount",
    "InvalidDims",
    "InvalidPose",
    "IoFailure",
    "Keypoint",
    "LabeledScene",
    "MalformedDescriptor",
    "MalformedFile",
    "NoDescriptors",
    "NonFiniteData",
    "NonPositiveLeaf",
    "PointCloud",
    "RigidPose",
    "SceneIndex",
    "TableParams",
    "UnknownArchetype",
    "VersionMismatch",
    "batch_detect",
    "build_config",
    "build_index",
    "compute_provenance",
    "derive_anchor",
    "descriptor_document",
    "detect",
    "detections_document",
    "export_detections_ply",
    "export_ibs_ply",
    "full_tensor_score",
    "load_config",
    "load_descriptor",
    "load_ply",
    "make_primitive",
    "make_table_scene",
    "make_training_pair",
    "match_radius_scale",
    "nearest",
    "prune_ibs",
    "query_template",
    "run_batch",
    "sample_ibs",
    "sample_keypoints",
    "sample_test_points",
    "sampling_domain",
    "save_descriptor",
    "save_ply",
    "score_at",
    "train_affordance",
    "train_report",
    "transform",
    "voxel_downsample",
    "yaw_matrix",
]
