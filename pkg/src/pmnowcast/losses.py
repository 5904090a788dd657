"""SSIM and the two composite training losses.

Losses take normalized fields of shape ``(B, 1, H, W)`` (or ``(H, W)``) and
reduce per sample first, then average over the batch. That keeps the batch
loss a plain mean of per-sample terms, so gradient accumulation over
micro-batches is exact.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, NumericError, ShapeError


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 11
    sigma: float = 1.5
    data_range: float = 2.0
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if self.window_size % 2 != 1 or self.window_size < 1:
            raise ConfigError("SSIM window size must be odd and positive")
        if self.sigma <= 0 or self.data_range <= 0:
            raise ConfigError("SSIM sigma and data_range must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossConfig:
    variant: str = "rmse_ssim"
    weights: tuple[float, float] | None = None
    huber_delta: float = 1.0
    eps: float = 1e-6
    ssim: SsimConfig = SsimConfig()

    def __post_init__(self):
        if self.variant not in DEFAULT_WEIGHTS:
            raise ConfigError(f"unknown loss variant '{self.variant}'")
        if self.weights is None:
            object.__setattr__(self, "weights", DEFAULT_WEIGHTS[self.variant])
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.weights) != 2 or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ConfigError("loss weights must be two numbers summing to 1")
        if self.huber_delta <= 0 or self.eps <= 0:
            raise ConfigError("huber_delta and eps must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        d = dict(d)
        if "ssim" in d and isinstance(d["ssim"], dict):
            d["ssim"] = SsimConfig(**d["ssim"])
        if d.get("weights") is not None:
            d["weights"] = tuple(d["weights"])
        return cls(**d)


DEFAULT_WEIGHTS = {"rmse_ssim": (0.75, 0.25), "huber_ssim": (0.7, 0.3)}


def gaussian_window(size: int = 11, sigma: float = 1.5, dtype=torch.float64) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - size // 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype)


def _as_batch(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 2:
        return x[None, None]
    if x.dim() == 3:
        return x[:, None]
    if x.dim() == 4 and x.shape[1] == 1:
        return x
    raise ShapeError(f"expected (H, W), (B, H, W) or (B, 1, H, W), got {tuple(x.shape)}")


def ssim_map(a: torch.Tensor, b: torch.Tensor, cfg: SsimConfig = SsimConfig()) -> torch.Tensor:
    """Per-pixel SSIM with Gaussian local statistics and reflect padding."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    a, b = _as_batch(a), _as_batch(b)
    w = gaussian_window(cfg.window_size, cfg.sigma, a.dtype).to(a.device)[None, None]
    pad = cfg.window_size // 2

    def filt(t):
        return F.conv2d(F.pad(t, (pad, pad, pad, pad), mode="reflect"), w)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    c1, c2 = cfg.c1, cfg.c2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a: torch.Tensor, b: torch.Tensor, cfg: SsimConfig = SsimConfig(), reduction: str = "mean") -> torch.Tensor:
    """Mean local SSIM. ``reduction="none"`` returns one value per sample."""
    m = ssim_map(a, b, cfg)
    if reduction == "none":
        return m.mean(dim=(1, 2, 3))
    return m.mean()


def _check_finite(*ts: torch.Tensor):
    for t in ts:
        if not torch.isfinite(t).all():
            raise NumericError("loss inputs contain non-finite values")


def _per_sample_mean(x: torch.Tensor) -> torch.Tensor:
    return x.flatten(1).mean(dim=1)


def _safe_sqrt(x: torch.Tensor) -> torch.Tensor:
    # d sqrt(x)/dx is infinite at 0; use the zero subgradient there instead of NaN
    pos = x > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, x, torch.ones_like(x))), torch.zeros_like(x))


def rmse_ssim_loss(pred: torch.Tensor, target: torch.Tensor, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """w0 * RMSE / (mean|target| + eps) + w1 * (1 - SSIM), averaged over samples."""
    _check_finite(pred, target)
    p, t = _as_batch(pred), _as_batch(target)
    rmse = _safe_sqrt(_per_sample_mean((p - t) ** 2))
    denom = _per_sample_mean(t.abs()) + cfg.eps
    s = ssim(p, t, cfg.ssim, reduction="none")
    w0, w1 = cfg.weights
    return (w0 * rmse / denom + w1 * (1 - s)).mean()


def huber(err: torch.Tensor, delta: float) -> torch.Tensor:
    a = err.abs()
    return torch.where(a <= delta, 0.5 * err**2, delta * (a - 0.5 * delta))


def huber_ssim_loss(pred: torch.Tensor, target: torch.Tensor, cfg: LossConfig = LossConfig("huber_ssim")) -> torch.Tensor:
    """w0 * meanHuber / (mean|target| + eps) + w1 * (1 - SSIM), averaged over samples."""
    _check_finite(pred, target)
    p, t = _as_batch(pred), _as_batch(target)
    hub = _per_sample_mean(huber(p - t, cfg.huber_delta))
    denom = _per_sample_mean(t.abs()) + cfg.eps
    s = ssim(p, t, cfg.ssim, reduction="none")
    w0, w1 = cfg.weights
    return (w0 * hub / denom + w1 * (1 - s)).mean()


def loss_fn(cfg: LossConfig):
    fn = rmse_ssim_loss if cfg.variant == "rmse_ssim" else huber_ssim_loss
    return lambda pred, target: fn(pred, target, cfg)


def loss_gradient_check(fn, pred: torch.Tensor, target: torch.Tensor, step: float = 1e-3) -> float:
    """Max |analytic - central FD| gradient error, relative to max |analytic|.

    Runs in float64 regardless of input dtype.
    """
    p = pred.detach().to(torch.float64).clone().requires_grad_(True)
    t = target.detach().to(torch.float64)
    fn(p, t).backward()
    analytic = p.grad.detach().flatten()
    numeric = torch.empty_like(analytic)
    flat = p.detach().clone().flatten()
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            fp = fn(flat.view_as(p), t).item()
            flat[i] = orig - step
            fm = fn(flat.view_as(p), t).item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * step)
    scale = analytic.abs().max().item()
    if scale == 0 or math.isnan(scale):
        return float((analytic - numeric).abs().max().item())
    return float((analytic - numeric).abs().max().item() / scale)
