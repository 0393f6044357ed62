"""AdaMixT: adaptive weighted mixture of multi-scale expert transformers
for multivariate time-series forecasting, desk scale and self-contained."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (RawDataset, SeriesWindow, SplitSpec, load_csv, make_windows,
                   save_csv, synth_multiperiodic)
from .errors import (AdamixtError, ConfigError, ContractError, DataError,
                     NumericError, ShapeError)
from .experts import ExpertProfile, dsm_profile, gpm_profile
from .model import ModelConfig, ModelState, build_model, forward
from .numerics import (AdamState, Tensor, adam_init, adam_step, gelu,
                       layer_norm, matmul, no_grad, set_default_dtype,
                       softmax_lastdim)
from .preprocess import (NormStats, PatchSet, PatchSpec, denormalize,
                         extract_patches, instance_normalize)
from .training import TrainConfig, mse_loss, restore_model, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AdamixtError", "Checkpoint", "ConfigError", "ContractError",
    "DataError", "ExpertProfile", "ModelConfig", "ModelState", "NormStats",
    "NumericError", "PatchSet", "PatchSpec", "RawDataset", "SeriesWindow",
    "ShapeError", "SplitSpec", "Tensor", "TrainConfig", "adam_init",
    "adam_step", "build_model", "denormalize", "dsm_profile",
    "extract_patches", "forward", "gelu", "gpm_profile", "instance_normalize",
    "layer_norm", "load_checkpoint", "load_csv", "make_windows", "matmul",
    "mse_loss", "no_grad", "restore_model", "save_checkpoint", "save_csv",
    "set_default_dtype", "softmax_lastdim", "synth_multiperiodic", "train",
]
