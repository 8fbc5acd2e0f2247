"""Foveated vision toolkit.

Space-variant retinal sampling on a golden-angle tessellation, complex-log
cortical image rendering, gaze-driven dataset construction, and a compact
convolutional classifier trained on the result.
"""

from .errors import (
    DegenerateInputError,
    FoveateError,
    ParseError,
    PointAtInfinityError,
    StageError,
    ValidationError,
)
from .retina import (
    GOLDEN_ANGLE,
    ImageVector,
    ReceptiveField,
    RetinaTessellation,
    backproject,
    compute_receptive_fields,
    generate_tessellation,
    load_imagevector,
    load_tessellation,
    reduction_ratio,
    sample,
    save_imagevector,
    save_tessellation,
)
from .cortex import (
    CorticalImage,
    CorticalMap,
    cortical_coordinates,
    grid_cortical_image,
    splat_cortical_image,
    subsample_cortical,
    wrap_angle,
)
from .gaze import (
    CropRect,
    DatasetManifest,
    FixationCluster,
    FixationRecord,
    Homography,
    RansacConfig,
    apply_homography,
    cluster_fixations,
    composite_fixations,
    convex_hull,
    estimate_homography,
    extract_crop,
    kmeans,
    parse_fixation_log,
    place_retina,
    ransac_homography,
    split_dataset,
)
from .dcnn import (
    EvalMetrics,
    Network,
    NetworkSpec,
    TrainConfig,
    build_network,
    evaluate,
    forward,
    load_checkpoint,
    loss_and_backward,
    save_checkpoint,
    sgd_step,
    train_epoch,
)
from .cli import PipelineConfig, ReductionReport, bench_reduction, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "DegenerateInputError",
    "FoveateError",
    "ParseError",
    "PointAtInfinityError",
    "StageError",
    "ValidationError",
    "GOLDEN_ANGLE",
    "ImageVector",
    "ReceptiveField",
    "RetinaTessellation",
    "backproject",
    "compute_receptive_fields",
    "generate_tessellation",
    "load_imagevector",
    "load_tessellation",
    "reduction_ratio",
    "sample",
    "save_imagevector",
    "save_tessellation",
    "CorticalImage",
    "CorticalMap",
    "cortical_coordinates",
    "grid_cortical_image",
    "splat_cortical_image",
    "subsample_cortical",
    "wrap_angle",
    "CropRect",
    "DatasetManifest",
    "FixationCluster",
    "FixationRecord",
    "Homography",
    "RansacConfig",
    "apply_homography",
    "cluster_fixations",
    "composite_fixations",
    "convex_hull",
    "estimate_homography",
    "extract_crop",
    "kmeans",
    "parse_fixation_log",
    "place_retina",
    "ransac_homography",
    "split_dataset",
    "EvalMetrics",
    "Network",
    "NetworkSpec",
    "TrainConfig",
    "build_network",
    "evaluate",
    "forward",
    "load_checkpoint",
    "loss_and_backward",
    "save_checkpoint",
    "sgd_step",
    "train_epoch",
    "PipelineConfig",
    "ReductionReport",
    "bench_reduction",
    "run_pipeline",
    "__version__",
]
