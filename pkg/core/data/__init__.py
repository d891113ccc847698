from .skeleton import JOINT_NAMES, NUM_JOINTS, SkeletonHierarchy, StageSpec, stage_partition
from .traits import TRAITS, TRAIT_CLASSES, TRAIT_NAMES, TraitSpec
from .sequences import LabelRecord, PoseSequence, normalize_sequence, window_sequence
from .loader import Dataset, DatasetManifest, SequenceRecord, check_split_disjoint, load_dataset, write_dataset
from .synthetic import GeneratedData, GeneratorSpec, generate_synthetic_dataset, write_generated

__all__ = [
    "JOINT_NAMES",
    "NUM_JOINTS",
    "SkeletonHierarchy",
    "StageSpec",
    "stage_partition",
    "TRAITS",
    "TRAIT_CLASSES",
    "TRAIT_NAMES",
    "TraitSpec",
    "LabelRecord",
    "PoseSequence",
    "normalize_sequence",
    "window_sequence",
    "Dataset",
    "DatasetManifest",
    "SequenceRecord",
    "check_split_disjoint",
    "load_dataset",
    "write_dataset",
    "GeneratedData",
    "GeneratorSpec",
    "generate_synthetic_dataset",
    "write_generated",
]
