"""conv2attn: exact conversion of 2D convolutions into patch-input
multi-head self-attention, rank certificates for minimum head counts, and
a toy two-phase (convolution then attention) training pipeline."""

from .attention import (
    AttentionTrace,
    MhsaWeights,
    RelativeBiasTable,
    mhsa_forward,
    softmax_row,
)
from .construction import (
    BOUNDARY_MODES,
    BOUNDARY_PHANTOM,
    BOUNDARY_STRICT,
    ConvertedModel,
    OffsetSet,
    build_hard_bias,
    build_output_projection,
    conv_to_mhsa,
    evaluate_converted,
    head_count,
    ring_radius,
    widen_weights,
)
from .convolution import (
    ConvKernel,
    conv2d,
    conv_as_linear_map,
    identity_kernel,
    random_kernel,
)
from .errors import (
    ArchiveError,
    ArchiveFormatError,
    ArchiveVersionError,
    CapacityError,
    DimensionError,
    InvalidArgumentError,
    InvariantViolationError,
    NumericError,
)
from .model_io import load, save
from .patches import (
    Image,
    PatchGeometry,
    PatchSequence,
    crop_patch_grid,
    pad_patch_grid,
    patchify,
    unpatchify,
)
from .rank_analysis import (
    LowerBoundReport,
    PatchRankProblem,
    PixelRankProblem,
    RankResult,
    build_patch_rank_matrix,
    build_pixel_rank_matrix,
    rank_residuals,
    verify_lower_bound,
)
from .toydata import ToyDataset, class_templates, generate_toy_dataset
from .training import (
    AttnClassifier,
    ConvClassifier,
    DatasetConfig,
    TrainConfig,
    TwoPhaseReport,
    backward,
    evaluate,
    forward_loss,
    run_two_phase,
    train_phase,
    transfer,
)

__version__ = "0.1.0"
