"""Missing-modality brain MRI synthesis toolkit.

Synthesizes an unacquired MRI contrast from the three available ones with a
windowed-attention encoder-decoder, and ships the full surrounding protocol:
volume/study IO, per-volume standardization, patch-based training, Gaussian
sliding-window inference, dropout simulation, and SSIM/Dice/HD95 evaluation.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    MrisynthError,
    NumericError,
)
from .inference import TilingConfig, gaussian_weight_map, sliding_window_synthesize
from .metrics import (
    ET,
    REGIONS,
    TC,
    WT,
    AggregateRow,
    MetricRecord,
    MetricReport,
    RegionSpec,
    SsimConfig,
    aggregate,
    compose_regions,
    dice,
    hd95,
    ssim,
)
from .model import (
    FeaturePyramid,
    ModelConfig,
    ParameterStore,
    SwinUnetr,
    build_model,
    forward,
    patch_merge,
    shifted_window_attention,
    window_partition,
    window_reverse,
)
from .preprocess import (
    ZScoreParams,
    minmax_rescale,
    zscore_apply,
    zscore_fit,
    zscore_invert,
)
from .training import (
    TrainConfig,
    TrainSample,
    checkpoint_roundtrip,
    fit,
    fit_all_scenarios,
    input_modalities,
    mse_loss,
    sample_patch,
    train_step,
)
from .volume_io import (
    MODALITIES,
    DropPlan,
    Study,
    Volume,
    drop_modality,
    load_study,
    load_volume,
    save_volume,
    validate_study,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateRow",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DropPlan",
    "ET",
    "FeaturePyramid",
    "MetricRecord",
    "MetricReport",
    "MODALITIES",
    "ModelConfig",
    "MrisynthError",
    "NumericError",
    "ParameterStore",
    "REGIONS",
    "RegionSpec",
    "SsimConfig",
    "Study",
    "SwinUnetr",
    "TC",
    "TilingConfig",
    "TrainConfig",
    "TrainSample",
    "Volume",
    "WT",
    "ZScoreParams",
    "aggregate",
    "build_model",
    "checkpoint_roundtrip",
    "compose_regions",
    "dice",
    "drop_modality",
    "fit",
    "fit_all_scenarios",
    "forward",
    "gaussian_weight_map",
    "hd95",
    "input_modalities",
    "load_checkpoint",
    "load_study",
    "load_volume",
    "minmax_rescale",
    "mse_loss",
    "patch_merge",
    "sample_patch",
    "save_checkpoint",
    "save_volume",
    "shifted_window_attention",
    "sliding_window_synthesize",
    "ssim",
    "train_step",
    "validate_study",
    "window_partition",
    "window_reverse",
    "zscore_apply",
    "zscore_fit",
    "zscore_invert",
]
