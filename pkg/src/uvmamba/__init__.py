"""UV-Mamba style urban-village segmentation on a from-scratch numpy autodiff engine."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import ConfigError, ModelConfig, UVMamba, count_params_flops

__all__ = ["ModelConfig", "ConfigError", "UVMamba", "count_params_flops",
           "save_checkpoint", "load_checkpoint", "CheckpointError"]
__version__ = "0.1.0"
