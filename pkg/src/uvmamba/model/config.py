from __future__ import annotations

from dataclasses import asdict, dataclass, fields

POSITION_MODES = ("serial", "parallel", "reverse")


class ConfigError(ValueError):
    """Invalid configuration or input geometry."""


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    num_classes: int = 2
    stage_channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    ssm_state_size: int = 8
    dcn_groups: int = 4
    dcn_points: int = 9
    position_mode: str = "serial"
    blocks_per_stage: int = 2
    use_sade: bool = True
    use_mssm: bool = True
    mlp_ratio: int = 4
    ssm_expand: int = 1
    selective: bool = True
    shared_scan_params: bool = True
    stem_channels: int | None = None  # defaults to C1 // 2

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if len(self.stage_channels) != 4:
            raise ConfigError("exactly four stage widths are required")
        if self.position_mode not in POSITION_MODES:
            raise ConfigError(f"position_mode must be one of {POSITION_MODES}, got {self.position_mode!r}")
        if not (self.use_sade or self.use_mssm):
            raise ConfigError("at least one of use_sade / use_mssm must be enabled")
        for c in self.stage_channels:
            if c < self.dcn_groups or c % self.dcn_groups:
                raise ConfigError(f"stage width {c} must be a positive multiple of dcn_groups={self.dcn_groups}")
        if self.ssm_state_size < 1 or self.blocks_per_stage < 1 or self.num_classes < 1:
            raise ConfigError("ssm_state_size, blocks_per_stage and num_classes must be >= 1")

    @property
    def stem_width(self) -> int:
        return self.stem_channels or max(self.stage_channels[0] // 2, 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)
