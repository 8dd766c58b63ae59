"""Encoder-decoder segmentation network assembled from the SSM, scan and deform modules."""

from .config import POSITION_MODES, ConfigError, ModelConfig
from .network import StageFeatures, UVMamba, count_params_flops

__all__ = ["ModelConfig", "ConfigError", "POSITION_MODES", "UVMamba", "StageFeatures", "count_params_flops"]
