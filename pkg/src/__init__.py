"""MERLIN despeckling toolkit - self-supervised SAR despeckling from the real/imaginary split"""

__version__ = "0.1.0"

from src.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.despeckle import combine_estimates, despeckle_component, despeckle_image, despeckle_intensity
from src.evaluation import (
    check_spatial_condition,
    check_transfer_independence,
    empirical_independence,
    enl,
    evaluate_checkpoint,
    full_likelihood,
    psnr_amplitude,
    residual_ratio,
)
from src.exceptions import (
    ConfigError,
    GraphError,
    MerlinError,
    NonFiniteLossError,
    RasterFormatError,
    ShapeMismatchError,
    SingularCovarianceError,
    SpectrumError,
    TransferFunctionError,
)
from src.models import (
    ComplexImage,
    EvalReport,
    LogImage,
    ReflectivityImage,
    RngStream,
    RunConfig,
    TrainConfig,
    TransferFunctionSpec,
    UNetConfig,
)
from src.speckle_sim import apply_transfer_function, sample_speckle_field, simulate_slc
from src.spectrum_prep import prepare_patch
from src.training import train, train_supervised_baseline

__all__ = [
    # Models
    "ComplexImage",
    "ReflectivityImage",
    "LogImage",
    "RngStream",
    "TransferFunctionSpec",
    "UNetConfig",
    "TrainConfig",
    "RunConfig",
    "EvalReport",
    # Simulation & preprocessing
    "sample_speckle_field",
    "apply_transfer_function",
    "simulate_slc",
    "prepare_patch",
    # Training & inference
    "train",
    "train_supervised_baseline",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "despeckle_component",
    "combine_estimates",
    "despeckle_image",
    "despeckle_intensity",
    # Evaluation
    "psnr_amplitude",
    "residual_ratio",
    "enl",
    "check_transfer_independence",
    "check_spatial_condition",
    "empirical_independence",
    "full_likelihood",
    "evaluate_checkpoint",
    # Exceptions
    "MerlinError",
    "RasterFormatError",
    "ShapeMismatchError",
    "TransferFunctionError",
    "SpectrumError",
    "GraphError",
    "NonFiniteLossError",
    "SingularCovarianceError",
    "ConfigError",
]
