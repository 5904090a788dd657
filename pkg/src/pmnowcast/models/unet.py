from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ShapeError
from .config import ModelConfig
from .recurrent import center_crop


class DoubleConv(nn.Sequential):
    def __init__(self, cin: int, cout: int, k: int = 3):
        super().__init__(
            nn.Conv2d(cin, cout, k, padding=k // 2),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, k, padding=k // 2),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
        )


class UNet(nn.Module):
    """Five-level U-Net with max-pool downsampling and bilinear upsampling.

    ``(B, T, C, H, W)`` is folded to ``(B, T*C, H, W)``; H and W must be
    divisible by 16.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.hidden_widths
        k = cfg.kernel_size
        cin = cfg.input_channels * cfg.time_depth
        self.encoders = nn.ModuleList()
        for width in w:
            self.encoders.append(DoubleConv(cin, width, k))
            cin = width
        self.decoders = nn.ModuleList(
            DoubleConv(w[i + 1] + w[i], w[i], k) for i in reversed(range(len(w) - 1))
        )
        self.head = nn.Conv2d(w[0], 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 5:
            x = x.flatten(1, 2)
        expected = self.cfg.input_channels * self.cfg.time_depth
        if x.dim() != 4 or x.shape[1] != expected:
            raise ShapeError(f"expected {expected} folded input channels, got {tuple(x.shape)}")
        factor = 2 ** (len(self.encoders) - 1)
        if x.shape[-1] % factor or x.shape[-2] % factor:
            raise ShapeError(f"spatial size {tuple(x.shape[-2:])} is not divisible by {factor}")

        skips = []
        for i, enc in enumerate(self.encoders):
            if i:
                x = F.max_pool2d(x, 2)
            x = enc(x)
            skips.append(x)
        x = skips.pop()
        for dec in self.decoders:
            skip = skips.pop()
            x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = dec(torch.cat([x, skip], dim=1))
        return torch.tanh(self.head(center_crop(x, self.cfg.output_size)))
