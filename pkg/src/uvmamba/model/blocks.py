"""Encoder building blocks. Token tensors are channels-last: (B, H, W, C)."""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import functional as F
from ..autodiff import ops
from ..deform import DeformParams, OffsetHead, dcn_aggregate
from ..scan_paths import DIRECTIONS, multi_scan_aggregate
from ..ssm import SelectiveProjection, SsmParams, init_a_log, init_delta_bias, ssm_scan, selective_params, zoh_discretize
from .config import ConfigError, ModelConfig
from .layers import Conv2d, LayerNorm, Linear, Module, parameter


def to_nchw(x):
    return ops.transpose(x, (0, 3, 1, 2))


def to_nhwc(x):
    return ops.transpose(x, (0, 2, 3, 1))


class MixFFN(Module):
    """Linear expand, depthwise 3x3 conv, GELU, linear project back."""

    def __init__(self, channels: int, ratio: int, rng, dtype=np.float32):
        hidden = channels * ratio
        self.fc1 = Linear(channels, hidden, rng, dtype=dtype)
        self.dwconv = Conv2d(hidden, hidden, 3, rng, padding=1, groups=hidden, dtype=dtype)
        self.fc2 = Linear(hidden, channels, rng, dtype=dtype)

    def forward(self, x):
        if x.ndim != 4:
            raise ConfigError(f"MixFFN expects grid tokens (B, H, W, C), got {x.shape}")
        h = to_nhwc(self.dwconv(to_nchw(self.fc1(x))))
        return self.fc2(F.gelu(h))


class DeformMixer(Module):
    """Value projection followed by deformable aggregation with a learned offset head."""

    def __init__(self, channels: int, groups: int, points: int, rng, dtype=np.float32):
        self.params = DeformParams(groups, points)
        self.value = Linear(channels, channels, rng, dtype=dtype)
        self.offset_head = OffsetHead.init(channels, self.params, dtype=dtype)
        cg = channels // groups
        bound = 1.0 / math.sqrt(cg * points)
        self.w_g = parameter(rng.uniform(-bound, bound, (groups, cg, cg)), dtype)

    def forward(self, x):
        xc = to_nchw(x)
        offsets, modulation = self.offset_head(xc)
        v = to_nchw(self.value(x))
        y = dcn_aggregate(v, offsets, modulation, self.w_g, self.params.groups, self.params.points)
        return to_nhwc(y)


class ScanMixer(Module):
    """Gated eight-direction state-space mixer.

    ``in_proj`` splits into a scan branch and a gate; the scan branch goes
    through SiLU, the multi-direction SSM, then is gated by SiLU(gate).
    """

    def __init__(self, channels: int, cfg: ModelConfig, rng, dtype=np.float32):
        inner = channels * cfg.ssm_expand
        N = cfg.ssm_state_size
        self.inner, self.N = inner, N
        self.selective = cfg.selective
        self.shared = cfg.shared_scan_params
        P = len(DIRECTIONS)
        self.in_proj = Linear(channels, 2 * inner, rng, dtype=dtype)
        if self.shared:
            self.ssm = SsmParams(parameter(init_a_log(inner, N), dtype))
        else:
            self.ssm = SsmParams(parameter(np.tile(init_a_log(inner, N), (P, 1, 1)), dtype))
        bound = 1.0 / math.sqrt(inner)
        if self.selective and self.shared:
            self.proj = SelectiveProjection.init(inner, N, rng, dtype=dtype)
        elif self.selective:
            self.w_delta = parameter(rng.uniform(-bound, bound, (P, inner, inner)) * 0.1, dtype)
            self.delta_bias = parameter(np.stack([init_delta_bias(inner, rng) for _ in range(P)])[:, None, :], dtype)
            self.w_B = parameter(rng.uniform(-bound, bound, (P, inner, N)), dtype)
            self.w_C = parameter(rng.uniform(-bound, bound, (P, inner, N)), dtype)
        else:
            lead = () if self.shared else (P,)
            self.delta_bias = parameter(np.broadcast_to(init_delta_bias(inner, rng), lead + (inner,)), dtype)
            self.B = parameter(rng.uniform(-1, 1, lead + (N,)), dtype)
            self.C = parameter(rng.uniform(-1, 1, lead + (N,)), dtype)
        self.out_proj = Linear(inner, channels, rng, dtype=dtype)

    def _scan(self, seq):
        M, P, L, D = seq.shape
        A = self.ssm.A()
        if self.selective and self.shared:
            delta, B, C, _ = selective_params(seq, self.proj)
        elif self.selective:
            delta = F.softplus(ops.add(ops.matmul(seq, self.w_delta), self.delta_bias))
            B = ops.matmul(seq, self.w_B)
            C = ops.matmul(seq, self.w_C)
        else:
            lead = (1,) if self.shared else (P,)
            delta = ops.broadcast_to(F.softplus(self.delta_bias).reshape(lead + (1, D)), (M, P, L, D))
            B = ops.broadcast_to(self.B.reshape(lead + (1, self.N)), (M, P, L, self.N))
            C = ops.broadcast_to(self.C.reshape(lead + (1, self.N)), (M, P, L, self.N))
        return ssm_scan(zoh_discretize(A, delta, B), C, seq)

    def _token_fields(self, tokens):
        delta, B, C, _ = selective_params(tokens, self.proj)
        abar, bbar = zoh_discretize(self.ssm.A(), delta, B)
        return abar, bbar, C

    @staticmethod
    def _scan_prepared(seq, abar, bbar, C):
        return ssm_scan((abar, bbar), C, seq)

    def forward(self, x):
        h = self.in_proj(x)
        xs = F.silu(h[..., : self.inner])
        z = h[..., self.inner :]
        if self.selective and self.shared:
            # direction-independent per-token parameters: discretize once on the grid
            y = multi_scan_aggregate(xs, self._scan_prepared, token_fields=self._token_fields)
        else:
            y = multi_scan_aggregate(xs, self._scan)
        return self.out_proj(ops.mul(y, F.silu(z)))


class ResidualBlock(Module):
    """Pre-norm residual pair: ``u = x + mixer(norm1(x)); out = u + ffn(norm2(u))``."""

    def __init__(self, channels: int, mixer: Module, cfg: ModelConfig, rng, dtype=np.float32, entry_norm=True):
        self.norm1 = LayerNorm(channels, dtype=dtype) if entry_norm else None
        self.mixer = mixer
        self.norm2 = LayerNorm(channels, dtype=dtype)
        self.ffn = MixFFN(channels, cfg.mlp_ratio, rng, dtype=dtype)

    def forward(self, x):
        u = ops.add(x, self.mixer(self.norm1(x)))
        return ops.add(u, self.ffn(self.norm2(u)))


def sade_block(channels, cfg, rng, dtype=np.float32, entry_norm=True) -> ResidualBlock:
    mixer = DeformMixer(channels, cfg.dcn_groups, cfg.dcn_points, rng, dtype=dtype)
    return ResidualBlock(channels, mixer, cfg, rng, dtype=dtype, entry_norm=entry_norm)


def mssm_block(channels, cfg, rng, dtype=np.float32, entry_norm=True) -> ResidualBlock:
    return ResidualBlock(channels, ScanMixer(channels, cfg, rng, dtype=dtype), cfg, rng,
                         dtype=dtype, entry_norm=entry_norm)


class DSSAPair(Module):
    """One SADE + MSSM unit wired as serial, reverse or parallel."""

    def __init__(self, channels: int, cfg: ModelConfig, rng, dtype=np.float32):
        self.mode = cfg.position_mode
        both = cfg.use_sade and cfg.use_mssm
        parallel = both and self.mode == "parallel"
        self.sade = sade_block(channels, cfg, rng, dtype) if cfg.use_sade else None
        self.mssm = mssm_block(channels, cfg, rng, dtype, entry_norm=not parallel) if cfg.use_mssm else None
        self.parallel = parallel

    def forward(self, x):
        if self.sade is None:
            return self.mssm(x)
        if self.mssm is None:
            return self.sade(x)
        if self.parallel:
            # shared entry norm feeds both mixers
            n = self.sade.norm1(x)
            u = ops.total([x, self.sade.mixer(n), self.mssm.mixer(n)])
            return ops.total([u, self.sade.ffn(self.sade.norm2(u)), self.mssm.ffn(self.mssm.norm2(u))])
        if self.mode == "reverse":
            return self.sade(self.mssm(x))
        return self.mssm(self.sade(x))


class DSSAStage(Module):
    """Patch embedding (3x3 stride-2 conv), stacked DSSA pairs, 1x1 patch merging.

    Input and output are NCHW; the pairs run channels-last.
    """

    def __init__(self, cin: int, cout: int, cfg: ModelConfig, rng, dtype=np.float32):
        self.embed = Conv2d(cin, cout, 3, rng, stride=2, padding=1, dtype=dtype)
        self.embed_norm = LayerNorm(cout, dtype=dtype)
        self.pairs = [DSSAPair(cout, cfg, rng, dtype) for _ in range(cfg.blocks_per_stage)]
        self.merge = Linear(cout, cout, rng, dtype=dtype)

    def forward(self, x):
        H, W = x.shape[2], x.shape[3]
        if H % 2 or W % 2:
            raise ConfigError(f"DSSA stage needs even spatial dims, got {H}x{W}")
        t = self.embed_norm(to_nhwc(self.embed(x)))
        for pair in self.pairs:
            t = pair(t)
        return to_nchw(self.merge(t))
