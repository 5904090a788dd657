"""Convolutional GRU and LSTM cells.

Both cells convolve the channel-concatenated ``[x; h]`` with a single weight
bank per gate group, which gives ``g * k^2 * (Cin + H) * H + g * H``
parameters (g = 3 for GRU, 4 for LSTM).
"""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ShapeError


def _check(x: torch.Tensor, h: torch.Tensor, cin: int, hidden: int):
    if x.dim() != 4 or h.dim() != 4:
        raise ShapeError("cell inputs must be (B, C, H, W)")
    if x.shape[1] != cin or h.shape[1] != hidden:
        raise ShapeError(f"expected {cin} input / {hidden} hidden channels, got {x.shape[1]} / {h.shape[1]}")
    if x.shape[0] != h.shape[0] or x.shape[-2:] != h.shape[-2:]:
        raise ShapeError(f"input {tuple(x.shape)} and state {tuple(h.shape)} do not match")


class ConvGRUCell(nn.Module):
    def __init__(self, in_channels: int, hidden: int, kernel_size: int = 3):
        super().__init__()
        self.in_channels = in_channels
        self.hidden = hidden
        pad = kernel_size // 2
        # update z and reset r
        self.gates = nn.Conv2d(in_channels + hidden, 2 * hidden, kernel_size, padding=pad)
        self.candidate = nn.Conv2d(in_channels + hidden, hidden, kernel_size, padding=pad)

    def init_state(self, x: torch.Tensor) -> torch.Tensor:
        return x.new_zeros(x.shape[0], self.hidden, *x.shape[-2:])

    def forward(self, x: torch.Tensor, h: torch.Tensor | None = None) -> torch.Tensor:
        if h is None:
            h = self.init_state(x)
        _check(x, h, self.in_channels, self.hidden)
        z, r = torch.sigmoid(self.gates(torch.cat([x, h], dim=1))).chunk(2, dim=1)
        h_tilde = torch.tanh(self.candidate(torch.cat([x, r * h], dim=1)))
        return (1 - z) * h + z * h_tilde


class ConvLSTMCell(nn.Module):
    def __init__(self, in_channels: int, hidden: int, kernel_size: int = 3):
        super().__init__()
        self.in_channels = in_channels
        self.hidden = hidden
        # gate order along the output channels: i, f, o, g
        self.gates = nn.Conv2d(in_channels + hidden, 4 * hidden, kernel_size, padding=kernel_size // 2)

    def init_state(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        z = x.new_zeros(x.shape[0], self.hidden, *x.shape[-2:])
        return z, z.clone()

    def forward(self, x: torch.Tensor, state: tuple[torch.Tensor, torch.Tensor] | None = None):
        h, c = self.init_state(x) if state is None else state
        _check(x, h, self.in_channels, self.hidden)
        if c.shape != h.shape:
            raise ShapeError("hidden and cell states differ in shape")
        i, f, o, g = self.gates(torch.cat([x, h], dim=1)).chunk(4, dim=1)
        c_next = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_next = torch.sigmoid(o) * torch.tanh(c_next)
        return h_next, c_next


def convgru_cell_step(x: torch.Tensor, h: torch.Tensor, cell: ConvGRUCell) -> torch.Tensor:
    return cell(x, h)


def convlstm_cell_step(x: torch.Tensor, state: tuple[torch.Tensor, torch.Tensor], cell: ConvLSTMCell):
    return cell(x, state)
