"""ConvGRU, ConvLSTM and U-Net regressors plus parameter accounting and checkpoints."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from safetensors import SafetensorError
from safetensors.torch import load_file, save_file
from torch import nn

from ..errors import CheckpointError
from .cells import ConvGRUCell, ConvLSTMCell, convgru_cell_step, convlstm_cell_step
from .config import PRESETS, PUBLISHED_PARAMETERS, ModelConfig, preset
from .recurrent import RecurrentRegressor, center_crop
from .unet import UNet

__all__ = [
    "ConvGRUCell",
    "ConvLSTMCell",
    "ModelConfig",
    "ParameterCount",
    "PRESETS",
    "PUBLISHED_PARAMETERS",
    "RecurrentRegressor",
    "UNet",
    "build_model",
    "center_crop",
    "closed_form_parameters",
    "convgru_cell_step",
    "convlstm_cell_step",
    "count_parameters",
    "export_weights",
    "load_weights",
    "preset",
    "save_weights",
]

CHECKPOINT_SCHEMA = "pmnowcast.checkpoint/1"


def _init_weights(model: nn.Module, cfg: ModelConfig) -> None:
    g = torch.Generator().manual_seed(cfg.seed)
    nonlinearity = "relu" if cfg.family == "unet" else "linear"
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity=nonlinearity, generator=g)
            nn.init.zeros_(m.bias)
    if cfg.family == "convlstm":
        for cell in model.cells:
            h = cell.hidden
            with torch.no_grad():
                cell.gates.bias[h : 2 * h].fill_(cfg.forget_bias)


def build_model(cfg: ModelConfig | str) -> nn.Module:
    if isinstance(cfg, str):
        cfg = preset(cfg)
    model = UNet(cfg) if cfg.family == "unet" else RecurrentRegressor(cfg)
    _init_weights(model, cfg)
    return model


@dataclass(frozen=True)
class ParameterCount:
    total: int
    breakdown: dict[str, int]

    def __post_init__(self):
        assert self.total == sum(self.breakdown.values())


def count_parameters(model: nn.Module) -> ParameterCount:
    """Trainable parameters, grouped by top-level submodule (layer)."""
    breakdown: dict[str, int] = {}
    for name, p in model.named_parameters():
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[0] in ("cells", "encoders", "decoders") else parts[0]
        breakdown[key] = breakdown.get(key, 0) + p.numel()
    return ParameterCount(sum(breakdown.values()), breakdown)


def closed_form_parameters(cfg: ModelConfig) -> int:
    """sum over layers of g*k^2*(Cin+H)*H + g*H, plus the (H_last + 1) head."""
    if not cfg.is_recurrent:
        raise ValueError("closed form only covers recurrent families")
    g, k = cfg.gates, cfg.kernel_size
    widths = (cfg.input_channels,) + cfg.hidden_widths
    total = sum(g * k * k * (cin + h) * h + g * h for cin, h in zip(widths[:-1], widths[1:]))
    return total + cfg.hidden_widths[-1] + 1


def save_weights(
    model: nn.Module,
    path: str | Path,
    species: str | None = None,
    stats=None,
    training: dict | None = None,
) -> Path:
    """Write weights and a JSON metadata header into one safetensors file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "schema": CHECKPOINT_SCHEMA,
        "model": model.cfg.to_dict(),
        "species": species,
        "stats": stats.to_dict() if stats is not None else None,
        "stats_digest": stats.digest() if stats is not None else None,
        "training": training or {},
    }
    tensors = {k: v.detach().cpu().contiguous() for k, v in model.state_dict().items()}
    save_file(tensors, str(path), metadata={"pmnowcast": json.dumps(meta)})
    return path


def read_metadata(path: str | Path) -> dict:
    from safetensors import safe_open

    try:
        with safe_open(str(path), framework="pt") as fh:
            raw = (fh.metadata() or {}).get("pmnowcast")
    except (SafetensorError, OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw is None:
        raise CheckpointError(f"{path} carries no pmnowcast metadata")
    meta = json.loads(raw)
    if meta.get("schema") != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"unsupported checkpoint schema {meta.get('schema')!r}")
    return meta


def load_weights(
    path: str | Path,
    species: str | None = None,
    expected_config: ModelConfig | None = None,
) -> tuple[nn.Module, dict]:
    """Rebuild the model stored at ``path``; returns ``(model, metadata)`` in eval mode."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} not found")
    meta = read_metadata(path)
    cfg = ModelConfig.from_dict(meta["model"])
    if expected_config is not None and expected_config != cfg:
        raise CheckpointError(f"checkpoint config {cfg} does not match requested {expected_config}")
    if species is not None and meta.get("species") not in (None, species):
        warnings.warn(
            f"checkpoint was trained for {meta['species']} but is used for {species}",
            stacklevel=2,
        )
    try:
        tensors = load_file(str(path))
    except (SafetensorError, OSError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    model = build_model(cfg)
    try:
        model.load_state_dict(tensors, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"weights in {path} do not fit {cfg.family}: {exc}") from exc
    model.eval()
    return model, meta


def export_weights(model: nn.Module, path: str | Path, species: str | None = None) -> Path:
    """Framework-neutral archive: named float arrays plus ``__config__`` JSON."""
    path = Path(path)
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    arrays["__config__"] = np.array(json.dumps({"model": model.cfg.to_dict(), "species": species}))
    np.savez(path, **arrays)
    return path
