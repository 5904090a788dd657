"""Species-specific training with the two optimisation recipes.

recurrent: Adam(1e-3) + ReduceLROnPlateau(0.5, patience 3), grad-norm clip 1.0
unet:      AdamW(weight_decay 1e-4) + cosine annealing over max_epochs,
           optimizer step every 2 micro-batches
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import torch
from torch import nn
from torch.utils.data import DataLoader, Dataset

from .errors import CheckpointError, ConfigError, NumericError, TrainingError
from .losses import LossConfig, loss_fn
from .models import ModelConfig, build_model, save_weights

log = logging.getLogger(__name__)

STATE_SCHEMA = "pmnowcast.trainstate/1"
HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "lr", "best_val_loss", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    recipe: Literal["recurrent", "unet"] = "recurrent"
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    plateau_threshold: float = 1e-4
    cosine_eta_min: float = 0.0
    accumulation_steps: int | None = None
    grad_clip: float | None = None
    max_epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0
    num_workers: int = 0

    def __post_init__(self):
        if self.recipe not in ("recurrent", "unet"):
            raise ConfigError(f"unknown recipe '{self.recipe}'")
        if self.accumulation_steps is None:
            object.__setattr__(self, "accumulation_steps", 2 if self.recipe == "unet" else 1)
        if self.grad_clip is None:
            object.__setattr__(self, "grad_clip", 1.0 if self.recipe == "recurrent" else 0.0)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.accumulation_steps < 1:
            raise ConfigError("accumulation_steps must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def for_model(cls, cfg: ModelConfig, **kw) -> "TrainConfig":
        return cls(recipe="unet" if cfg.family == "unet" else "recurrent", **kw)


def default_loss(cfg: ModelConfig) -> LossConfig:
    return LossConfig("huber_ssim" if cfg.family == "unet" else "rmse_ssim")


def set_deterministic(enabled: bool = True) -> None:
    torch.use_deterministic_algorithms(enabled)
    if enabled:
        torch.set_num_threads(1)


def deterministic_from_env() -> bool:
    return os.environ.get("PMNOWCAST_DETERMINISTIC", "1").lower() not in ("0", "false", "no")


def make_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.recipe == "recurrent":
        return torch.optim.Adam(model.parameters(), lr=cfg.lr)
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def make_scheduler(opt: torch.optim.Optimizer, cfg: TrainConfig):
    if cfg.recipe == "recurrent":
        return torch.optim.lr_scheduler.ReduceLROnPlateau(
            opt,
            mode="min",
            factor=cfg.plateau_factor,
            patience=cfg.plateau_patience,
            threshold=cfg.plateau_threshold,
            threshold_mode="rel",
        )
    return torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.max_epochs, eta_min=cfg.cosine_eta_min)


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    """Closed-form learning rate of the unet recipe at the start of ``epoch``."""
    return cfg.cosine_eta_min + (cfg.lr - cfg.cosine_eta_min) * (1 + math.cos(math.pi * epoch / cfg.max_epochs)) / 2


def _guard(dataset: Dataset, expected: str) -> None:
    split = getattr(dataset, "split", None)
    role = getattr(split, "role", None)
    if role == "test":
        raise ConfigError("the test split cannot be used for training or validation")
    if role is not None and role != expected:
        raise ConfigError(f"expected a {expected} split, got {role}")
    if len(dataset) == 0:
        raise ConfigError(f"{expected} split is empty")


def _param_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


@torch.no_grad()
def validate(model: nn.Module, dataset: Dataset, loss_cfg: LossConfig, batch_size: int = 32) -> float:
    """Sample-weighted mean loss with dropout off."""
    was_training = model.training
    model.eval()
    fn = loss_fn(loss_cfg)
    dtype = _param_dtype(model)
    total, n = 0.0, 0
    for x, y in DataLoader(dataset, batch_size=batch_size, shuffle=False):
        x, y = x.to(dtype), y.to(dtype)
        total += fn(model(x), y).item() * x.shape[0]
        n += x.shape[0]
    model.train(was_training)
    return total / n


def epoch_order(n: int, seed: int, epoch: int) -> list[int]:
    g = torch.Generator().manual_seed(seed * 1_000_003 + epoch)
    return torch.randperm(n, generator=g).tolist()


def run_epoch(
    model: nn.Module,
    dataset: Dataset,
    opt: torch.optim.Optimizer,
    loss_cfg: LossConfig,
    cfg: TrainConfig,
    epoch: int,
) -> float:
    """One pass over ``dataset``; returns the sample-weighted mean training loss."""
    model.train()
    fn = loss_fn(loss_cfg)
    dtype = _param_dtype(model)
    loader = DataLoader(
        dataset,
        batch_size=cfg.batch_size,
        sampler=epoch_order(len(dataset), cfg.seed, epoch),
        num_workers=cfg.num_workers,
    )
    k = cfg.accumulation_steps
    total, n, pending = 0.0, 0, 0
    opt.zero_grad(set_to_none=True)

    def step():
        if pending < k:
            # partial trailing window: rescale so gradients stay a window mean
            for p in model.parameters():
                if p.grad is not None:
                    p.grad.mul_(k / pending)
        if cfg.grad_clip:
            nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        opt.zero_grad(set_to_none=True)

    for b, (x, y) in enumerate(loader):
        x, y = x.to(dtype), y.to(dtype)
        try:
            loss = fn(model(x), y)
        except NumericError as exc:
            raise TrainingError(
                f"{exc} at epoch {epoch} batch {b} (lr={opt.param_groups[0]['lr']:.3g})"
            ) from exc
        if not torch.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at epoch {epoch} batch {b} (lr={opt.param_groups[0]['lr']:.3g})"
            )
        (loss / k).backward()
        total += loss.item() * x.shape[0]
        n += x.shape[0]
        pending += 1
        if pending == k:
            step()
            pending = 0
    if pending:
        step()
    return total / n


@dataclass
class TrainResult:
    model: nn.Module
    history: list[dict] = field(default_factory=list)
    best_val_loss: float = math.inf
    best_epoch: int = -1
    checkpoint: Path | None = None


def _append_history(path: Path, row: dict) -> None:
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        if new:
            w.writeheader()
        w.writerow({k: row[k] for k in HISTORY_FIELDS})


def train(
    model: nn.Module,
    species: str,
    train_data: Dataset,
    val_data: Dataset,
    loss_cfg: LossConfig | None = None,
    cfg: TrainConfig | None = None,
    out_dir: str | Path | None = None,
    stats=None,
    stop_after_epoch: int | None = None,
    _state: dict | None = None,
) -> TrainResult:
    """Train ``model`` for one PM species.

    With ``out_dir`` set, the best-validation weights go to ``best.safetensors``,
    the resumable state to ``last_state.pt`` and per-epoch metrics to
    ``history.csv``. ``stop_after_epoch`` ends this call early without
    changing the schedule, which is how interrupted runs are simulated.
    """
    cfg = cfg or TrainConfig.for_model(model.cfg)
    loss_cfg = loss_cfg or default_loss(model.cfg)
    _guard(train_data, "train")
    _guard(val_data, "val")

    opt = make_optimizer(model, cfg)
    sched = make_scheduler(opt, cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    result = TrainResult(model)
    start_epoch, since_best = 0, 0
    if _state is None:
        torch.manual_seed(cfg.seed)
        if out is not None and (out / "history.csv").exists():
            (out / "history.csv").unlink()
    else:
        opt.load_state_dict(_state["optimizer"])
        sched.load_state_dict(_state["scheduler"])
        torch.set_rng_state(_state["rng"])
        start_epoch = _state["epoch"] + 1
        since_best = _state["since_best"]
        result.history = list(_state["history"])
        result.best_val_loss = _state["best_val_loss"]
        result.best_epoch = _state["best_epoch"]
        if out is not None and (out / "best.safetensors").exists():
            result.checkpoint = out / "best.safetensors"

    for epoch in range(start_epoch, cfg.max_epochs):
        t0 = time.perf_counter()
        lr = opt.param_groups[0]["lr"]
        train_loss = run_epoch(model, train_data, opt, loss_cfg, cfg, epoch)
        val_loss = validate(model, val_data, loss_cfg, cfg.batch_size)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch} (lr={lr:.3g})")
        if cfg.recipe == "recurrent":
            sched.step(val_loss)
        else:
            sched.step()

        improved = val_loss < result.best_val_loss
        if improved:
            result.best_val_loss, result.best_epoch, since_best = val_loss, epoch, 0
            if out is not None:
                result.checkpoint = save_weights(
                    model,
                    out / "best.safetensors",
                    species=species,
                    stats=stats,
                    training={"epoch": epoch, "val_loss": val_loss, "train": cfg.to_dict(), "loss": loss_cfg.to_dict()},
                )
        else:
            since_best += 1
        row = {
            "epoch": epoch,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "lr": lr,
            "best_val_loss": result.best_val_loss,
            "seconds": round(time.perf_counter() - t0, 3),
        }
        result.history.append(row)
        log.info("epoch %d train %.5f val %.5f lr %.3g", epoch, train_loss, val_loss, lr)

        if out is not None:
            _append_history(out / "history.csv", row)
            torch.save(
                {
                    "schema": STATE_SCHEMA,
                    "species": species,
                    "model_config": model.cfg.to_dict(),
                    "model": model.state_dict(),
                    "optimizer": opt.state_dict(),
                    "scheduler": sched.state_dict(),
                    "rng": torch.get_rng_state(),
                    "epoch": epoch,
                    "since_best": since_best,
                    "history": result.history,
                    "best_val_loss": result.best_val_loss,
                    "best_epoch": result.best_epoch,
                    "train": cfg.to_dict(),
                    "loss": loss_cfg.to_dict(),
                    "stats": stats.to_dict() if stats is not None else None,
                },
                out / "last_state.pt",
            )
        if since_best >= cfg.early_stop_patience:
            log.info("early stop at epoch %d", epoch)
            break
        if stop_after_epoch is not None and epoch >= stop_after_epoch:
            break
    return result


def resume(
    state_path: str | Path,
    train_data: Dataset,
    val_data: Dataset,
    cfg: TrainConfig | None = None,
    out_dir: str | Path | None = None,
    stats=None,
    stop_after_epoch: int | None = None,
) -> TrainResult:
    """Continue a run from ``last_state.pt``; trajectory matches an uninterrupted run."""
    state_path = Path(state_path)
    if not state_path.is_file():
        raise CheckpointError(f"training state {state_path} not found")
    try:
        state = torch.load(state_path, map_location="cpu", weights_only=False)
    except Exception as exc:  # torch raises a zoo of types for bad pickles
        raise CheckpointError(f"cannot read training state {state_path}: {exc}") from exc
    if not isinstance(state, dict) or state.get("schema") != STATE_SCHEMA:
        raise CheckpointError(f"{state_path} is not a {STATE_SCHEMA} file")
    saved = TrainConfig(**state["train"])
    if cfg is None:
        cfg = saved
    elif cfg.batch_size != saved.batch_size:
        warnings.warn(
            f"resuming with batch_size {cfg.batch_size} (was {saved.batch_size}); trajectory will differ",
            stacklevel=2,
        )
    model = build_model(ModelConfig.from_dict(state["model_config"]))
    model.load_state_dict(state["model"])
    return train(
        model,
        state["species"],
        train_data,
        val_data,
        LossConfig.from_dict(state["loss"]),
        cfg,
        out_dir=out_dir if out_dir is not None else state_path.parent,
        stats=stats,
        stop_after_epoch=stop_after_epoch,
        _state=state,
    )
