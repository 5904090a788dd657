from __future__ import annotations

import torch
from torch import nn

from ..errors import ShapeError
from .cells import ConvGRUCell, ConvLSTMCell
from .config import ModelConfig


def center_crop(x: torch.Tensor, size: int) -> torch.Tensor:
    h, w = x.shape[-2:]
    if size > h or size > w:
        raise ShapeError(f"cannot crop {h}x{w} to {size}x{size}")
    top, left = (h - size) // 2, (w - size) // 2
    return x[..., top : top + size, left : left + size]


class RecurrentRegressor(nn.Module):
    """Three stacked ConvGRU/ConvLSTM layers, centre crop, 1x1 conv + tanh.

    Input ``(B, T, C, H, W)``, output ``(B, 1, S, S)`` with ``S = output_size``.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if not cfg.is_recurrent:
            raise ValueError("RecurrentRegressor needs a convgru or convlstm config")
        self.cfg = cfg
        Cell = ConvGRUCell if cfg.family == "convgru" else ConvLSTMCell
        widths = (cfg.input_channels,) + cfg.hidden_widths
        self.cells = nn.ModuleList(
            Cell(cin, h, cfg.kernel_size) for cin, h in zip(widths[:-1], widths[1:])
        )
        self.dropouts = nn.ModuleList(nn.Dropout2d(p) for p in cfg.dropout_rates)
        self.head = nn.Conv2d(cfg.hidden_widths[-1], 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 4:
            x = x.unsqueeze(1)
        if x.dim() != 5 or x.shape[2] != self.cfg.input_channels:
            raise ShapeError(
                f"expected (B, T, {self.cfg.input_channels}, H, W), got {tuple(x.shape)}"
            )
        seq = list(x.unbind(dim=1))
        for cell, drop in zip(self.cells, self.dropouts):
            state = None
            out = []
            for xt in seq:
                state = cell(xt, state)
                h = state[0] if isinstance(state, tuple) else state
                out.append(drop(h))
            seq = out
        h_last = center_crop(seq[-1], self.cfg.output_size)
        return torch.tanh(self.head(h_last))
