"""Graph-regularized image denoiser with an unrolled conjugate-gradient solver.

The pipeline builds a generalized bilateral smoother from per-pixel
features, normalizes it symmetrically, realizes the regularized linear
system as a truncated Taylor polynomial of the smoother, and solves it with
a fixed-depth unrolled CG network whose small parameter set (metric factor,
polynomial coefficients, per-depth step scalars) is trained end to end.
"""

from .cg_unroll import CgConfig, CgTrace, calibrate_cg_params, unrolled_cg
from .errors import (
    CliUsageError,
    DegenerateMatrixError,
    GraphDenoiseError,
    ImageFormatError,
    InvalidInputError,
    NumericDivergenceError,
)
from .graph_filter import (
    FEATURE_DIM,
    DenoiserOperator,
    FeatureField,
    MetricFactor,
    SparseFilterMatrix,
    apply_psi,
    build_filter_matrix,
    central_gradients,
    estimate_spectrum,
    extract_features,
    filter_weight,
    normalize,
)
from .imaging import (
    GrayImage,
    PatchGrid,
    add_awgn,
    load_image,
    partition,
    psnr,
    reassemble,
    save_image,
    synthesize_image,
)
from .taylor_system import TaylorSystemOperator, default_coefficients
from .train import (
    EpochStats,
    ParamVector,
    PipelineConfig,
    TrainState,
    adam_step,
    central_difference,
    evaluate_psnr,
    forward,
    grad_fd,
    grad_reverse,
    load_checkpoint,
    loss,
    loss_and_grad,
    save_checkpoint,
    train_loop,
)

__version__ = "0.1.0"

__all__ = [
    "CgConfig",
    "CgTrace",
    "CliUsageError",
    "DegenerateMatrixError",
    "DenoiserOperator",
    "EpochStats",
    "FEATURE_DIM",
    "FeatureField",
    "GrayImage",
    "GraphDenoiseError",
    "ImageFormatError",
    "InvalidInputError",
    "MetricFactor",
    "NumericDivergenceError",
    "ParamVector",
    "PatchGrid",
    "PipelineConfig",
    "SparseFilterMatrix",
    "TaylorSystemOperator",
    "TrainState",
    "adam_step",
    "add_awgn",
    "apply_psi",
    "build_filter_matrix",
    "calibrate_cg_params",
    "central_difference",
    "central_gradients",
    "default_coefficients",
    "estimate_spectrum",
    "evaluate_psnr",
    "extract_features",
    "filter_weight",
    "forward",
    "grad_fd",
    "grad_reverse",
    "load_checkpoint",
    "load_image",
    "loss",
    "loss_and_grad",
    "normalize",
    "partition",
    "psnr",
    "reassemble",
    "save_checkpoint",
    "save_image",
    "synthesize_image",
    "train_loop",
    "unrolled_cg",
]
