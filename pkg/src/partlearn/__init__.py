"""Structured-sparsity multitask learning over part/modality feature groups."""

from .layout import Block, FeatureLayout, LayoutError, PartSpec, singleton_layout
from .norms import (
    DEFAULT_EPSILON,
    NormSpec,
    group_magnitudes,
    hierarchical_norm,
    hierarchical_norm_grad,
    mixed_norm,
    mixed_norm_grad,
    norm_gradient,
    norm_value,
)
from .objective import (
    VARIANTS,
    ObjectiveConfig,
    make_objective,
    multitask_row_penalty,
    objective_value_and_grad,
    one_hot,
    squared_loss,
    validate_label_matrix,
)
from .optimize import (
    IterationRecord,
    LineSearchWarning,
    OptimizationTrace,
    OptimizerConfig,
    check_gradient,
    minimize,
)
from .bundle import (
    ChecksumError,
    ContainerError,
    CorruptHeaderError,
    FeatureBundle,
    FormatVersionError,
    Split,
    SyntheticDataset,
    SyntheticSpec,
    append_constant_feature,
    enumerate_splits,
    generate_synthetic,
    import_text_features,
    make_split,
    merge_modalities,
    read_bundle,
    split_from_file,
    subset,
    write_bundle,
    write_split_file,
)
from .estimators import (
    CrossValidationResult,
    EvaluationReport,
    MultipartClassifier,
    PartSelectionReport,
    cross_validate_subjects,
    evaluate,
    evaluate_split,
    fit_bundle,
    load_model,
    report_part_selection,
    save_model,
)
from .skeleton import (
    PyramidConfig,
    ReferenceJoints,
    SkeletonSequence,
    encode_bundle,
    fourier_temporal_pyramid,
    normalize_skeleton,
    read_manifest,
    read_skeleton_file,
    skeleton_layout,
    write_manifest,
    write_skeleton_file,
)

__version__ = "0.1.0"
