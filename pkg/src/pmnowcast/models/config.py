from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Literal

from ..errors import ConfigError

Family = Literal["convgru", "convlstm", "unet"]


@dataclass(frozen=True)
class ModelConfig:
    family: Family
    hidden_widths: tuple[int, ...]
    kernel_size: int = 3
    dropout_rates: tuple[float, ...] = ()
    input_channels: int = 10
    time_depth: int = 1
    output_size: int = 128
    forget_bias: float = 1.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        object.__setattr__(self, "dropout_rates", tuple(float(p) for p in self.dropout_rates))
        if self.family not in ("convgru", "convlstm", "unet"):
            raise ConfigError(f"unknown model family '{self.family}'")
        if not self.hidden_widths or any(h <= 0 for h in self.hidden_widths):
            raise ConfigError("hidden_widths must be a non-empty list of positive ints")
        if self.kernel_size % 2 != 1:
            raise ConfigError("kernel_size must be odd")
        if self.is_recurrent:
            if len(self.hidden_widths) != 3 or len(self.dropout_rates) != 3:
                raise ConfigError("recurrent models need exactly 3 hidden widths and 3 dropout rates")
            if any(not 0.0 <= p < 1.0 for p in self.dropout_rates):
                raise ConfigError("dropout rates must lie in [0, 1)")
        elif len(self.hidden_widths) != 5:
            raise ConfigError("unet needs 5 encoder widths")
        if self.time_depth < 1 or self.input_channels < 1 or self.output_size < 1:
            raise ConfigError("time_depth, input_channels and output_size must be positive")

    @property
    def is_recurrent(self) -> bool:
        return self.family in ("convgru", "convlstm")

    @property
    def gates(self) -> int:
        return {"convgru": 3, "convlstm": 4}[self.family]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        d["dropout_rates"] = list(self.dropout_rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model field(s): {sorted(extra)}")
        return cls(**d)

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


PRESETS: dict[str, ModelConfig] = {
    "convgru_1": ModelConfig("convgru", (64, 128, 64), 3, (0.2, 0.3, 0.2), name="convgru_1"),
    "convgru_2": ModelConfig("convgru", (128, 64, 128), 3, (0.3, 0.2, 0.3), name="convgru_2"),
    "convlstm_1": ModelConfig("convlstm", (64, 128, 64), 3, (0.2, 0.3, 0.2), name="convlstm_1"),
    "convlstm_2": ModelConfig("convlstm", (128, 64, 128), 3, (0.3, 0.2, 0.3), name="convlstm_2"),
    "unet": ModelConfig("unet", (16, 32, 64, 128, 256), 3, name="unet"),
}

# Totals as printed in the published model table.
PUBLISHED_PARAMETERS = {
    "convgru_1": 1.12e6,
    "convgru_2": 1.47e6,
    "convlstm_1": 1.50e6,
    "convlstm_2": 1.96e6,
    "unet": 4.33e6,
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown model preset '{name}' (choose from {sorted(PRESETS)})") from None
    return replace(cfg, **overrides) if overrides else cfg
