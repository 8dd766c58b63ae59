"""The full encoder-decoder segmentation network."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..autodiff import functional as F
from ..autodiff import ops
from ..autodiff.tensor import DimensionError, Tensor, as_tensor
from .blocks import DSSAStage
from .config import ConfigError, ModelConfig
from .layers import Conv2d, ConvNormAct, ConvTranspose2d, Module


class StageFeatures(NamedTuple):
    s1: Tensor
    s2: Tensor
    s3: Tensor
    s4: Tensor


class Stem(Module):
    """7x7 stride-2 conv then three 3x3 convs; halves the resolution."""

    def __init__(self, cin: int, width: int, rng, dtype=np.float32):
        self.layers = [ConvNormAct(cin, width, 7, rng, stride=2, padding=3, dtype=dtype)]
        self.layers += [ConvNormAct(width, width, 3, rng, stride=1, padding=1, dtype=dtype) for _ in range(3)]

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class UpBlock(Module):
    """Transposed-conv x2 upsample, optional skip concat, two 3x3 convs."""

    def __init__(self, cin: int, cskip: int, cout: int, rng, dtype=np.float32):
        self.up = ConvTranspose2d(cin, cout, 2, rng, stride=2, dtype=dtype)
        self.conv1 = ConvNormAct(cout + cskip, cout, 3, rng, padding=1, dtype=dtype)
        self.conv2 = ConvNormAct(cout, cout, 3, rng, padding=1, dtype=dtype)
        self.cskip = cskip

    def forward(self, x, skip=None):
        x = self.up(x)
        if self.cskip:
            if skip is None:
                raise DimensionError("UpBlock configured with a skip connection but none given")
            x = ops.concat([x, skip], axis=1)
        return self.conv2(self.conv1(x))


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        c1, c2, c3, c4 = cfg.stage_channels
        c0 = cfg.stem_width
        self.ups = [
            UpBlock(c4, c3, c3, rng, dtype),
            UpBlock(c3, c2, c2, rng, dtype),
            UpBlock(c2, c1, c1, rng, dtype),
            UpBlock(c1, 0, c0, rng, dtype),
        ]
        self.head = Conv2d(c0, cfg.num_classes, 1, rng, dtype=dtype)

    def forward(self, feats: StageFeatures, out_hw: tuple[int, int]):
        if len(feats) != 4:
            raise DimensionError(f"decoder needs 4 stage features, got {len(feats)}")
        s1, s2, s3, s4 = feats
        x = self.ups[0](s4, s3)
        x = self.ups[1](x, s2)
        x = self.ups[2](x, s1)
        x = self.ups[3](x)
        # 1x1 projection commutes with the row-stochastic resize; project first, it is cheaper
        return F.bilinear_resize(self.head(x), *out_hw)


class UVMamba(Module):
    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0, dtype=np.float32):
        self.cfg = cfg or ModelConfig()
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c = self.cfg.stage_channels
        self.stem = Stem(self.cfg.in_channels, self.cfg.stem_width, rng, dtype)
        widths = (self.cfg.stem_width,) + tuple(c)
        self.stages = [DSSAStage(widths[i], widths[i + 1], self.cfg, rng, dtype) for i in range(4)]
        self.decoder = Decoder(self.cfg, rng, dtype)

    def check_input(self, image: Tensor) -> None:
        if image.ndim != 4 or image.shape[1] != self.cfg.in_channels:
            raise DimensionError(f"expected (B, {self.cfg.in_channels}, H, W) input, got {image.shape}")
        H, W = image.shape[2], image.shape[3]
        if H % 32 or W % 32:
            raise ConfigError(f"input size {H}x{W} must be divisible by 32")

    def forward_features(self, image) -> StageFeatures:
        image = as_tensor(image, dtype=self.dtype)
        self.check_input(image)
        x = self.stem(image)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return StageFeatures(*feats)

    def forward(self, image) -> Tensor:
        image = as_tensor(image, dtype=self.dtype)
        feats = self.forward_features(image)
        return self.decoder(feats, (image.shape[2], image.shape[3]))

    def predict(self, image) -> np.ndarray:
        """Argmax class map (B, H, W) without recording gradients."""
        logits = self.forward(image)
        return logits.data.argmax(axis=1)


def count_params_flops(cfg: ModelConfig, H: int = 64, W: int = 64) -> dict:
    """Exact parameter count and floating-point operations (2 x MACs) of one forward pass."""
    model = UVMamba(cfg, seed=0)
    image = np.zeros((1, cfg.in_channels, H, W), dtype=np.float32)
    with ops.count_macs() as box:
        model.forward(image)
    return {"params": model.num_parameters(), "macs": box[0], "flops": 2 * box[0], "input_hw": (H, W)}
