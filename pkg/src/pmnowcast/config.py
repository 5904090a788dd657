"""Experiment configuration: one YAML document plus dotted-path overrides."""

from __future__ import annotations

import dataclasses
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .ingest import INPUT_DOMAIN, OUTPUT_DOMAIN, GridDomain, centered_subdomain, resolve_window
from .losses import LossConfig, SsimConfig
from .models.config import ModelConfig, preset
from .preprocess import SplitSpec
from .synthetic import PROFILES, ScenarioConfig
from .training import TrainConfig, default_loss


@dataclass
class Paths:
    archive: Path
    output: Path
    file_pattern: str = "%Y-%m-%d.nc"
    stats: Path | None = None

    @property
    def stats_file(self) -> Path:
        return self.stats if self.stats is not None else self.output / "stats.json"


@dataclass
class ExperimentConfig:
    species: str
    paths: Paths
    input_domain: GridDomain
    output_domain: GridDomain
    split: SplitSpec
    model: ModelConfig
    loss: LossConfig
    train: TrainConfig
    eval_ssim: SsimConfig | None = None
    scenario: ScenarioConfig | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def run_name(self) -> str:
        return f"{self.model.name or self.model.family}_{self.species}"

    @property
    def run_dir(self) -> Path:
        return self.paths.output / self.run_name


_TOP_KEYS = {"species", "paths", "domain", "split", "model", "loss", "train", "eval", "scenario"}


def _date(value: Any, where: str) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"{where}: '{value}' is not an ISO date") from None


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a mapping")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config field '{where}.{key}'" if where else f"unknown config field '{key}'")


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _construct(cls, section: dict, where: str, **extra):
    _check_keys(section, _fields(cls), where)
    try:
        return cls(**{**section, **extra})
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _domains(section: dict) -> tuple[GridDomain, GridDomain]:
    _check_keys(section, {"profile", "input", "output_size"}, "domain")
    if "input" in section:
        b = section["input"]
        _check_keys(b, {"lat_start", "lat_end", "lon_start", "lon_end", "resolution"}, "domain.input")
        inp = resolve_window(**b)
        size = int(section.get("output_size", inp.n_lat // 2))
        return inp, centered_subdomain(inp, size)
    profile = section.get("profile", "global")
    if profile not in PROFILES:
        raise ConfigError(f"unknown domain.profile '{profile}'")
    _, inp, out = PROFILES[profile]
    if "output_size" in section:
        out = centered_subdomain(inp, int(section["output_size"]))
    return inp, out


def from_dict(doc: dict) -> ExperimentConfig:
    _check_keys(doc, _TOP_KEYS, "")
    for key in ("species", "paths"):
        if key not in doc:
            raise ConfigError(f"missing config field '{key}'")
    species = doc["species"]
    if species not in ("pm1", "pm2p5", "pm10"):
        raise ConfigError(f"species: '{species}' is not one of pm1, pm2p5, pm10")

    p = doc["paths"]
    _check_keys(p, _fields(Paths), "paths")
    if "archive" not in p or "output" not in p:
        raise ConfigError("paths.archive and paths.output are required")
    paths = Paths(
        Path(p["archive"]),
        Path(p["output"]),
        p.get("file_pattern", "%Y-%m-%d.nc"),
        Path(p["stats"]) if p.get("stats") else None,
    )

    inp, out = _domains(doc.get("domain", {}) or {})

    s = dict(doc.get("split", {}) or {})
    for k in ("train_start", "train_end", "test_start", "test_end"):
        if k in s:
            s[k] = _date(s[k], f"split.{k}")
    split = _construct(SplitSpec, s, "split")

    m = dict(doc.get("model", {}) or {"preset": "convgru_1"})
    name = m.pop("preset", None)
    for k in ("hidden_widths", "dropout_rates"):
        if k in m:
            m[k] = tuple(m[k])
    _check_keys(m, _fields(ModelConfig), "model")
    m.setdefault("output_size", out.n_lat)
    try:
        model = preset(name, **m) if name else ModelConfig(**m)
    except TypeError as exc:
        raise ConfigError(f"model: {exc}") from exc
    if model.output_size != out.n_lat:
        raise ConfigError(f"model.output_size {model.output_size} != output domain size {out.n_lat}")

    lsec = dict(doc.get("loss", {}) or {})
    _check_keys(lsec, _fields(LossConfig), "loss")
    if "ssim" in lsec:
        _check_keys(lsec["ssim"], _fields(SsimConfig), "loss.ssim")
    loss = LossConfig.from_dict(lsec) if lsec else default_loss(model)

    tsec = dict(doc.get("train", {}) or {})
    tsec.setdefault("recipe", "unet" if model.family == "unet" else "recurrent")
    train = _construct(TrainConfig, tsec, "train")

    esec = doc.get("eval", {}) or {}
    _check_keys(esec, {"ssim"}, "eval")
    eval_ssim = _construct(SsimConfig, esec["ssim"], "eval.ssim") if "ssim" in esec else None

    scenario = None
    if doc.get("scenario"):
        sc = dict(doc["scenario"])
        _check_keys(sc, {"seed", "start", "end", "profile", "pm_units"}, "scenario")
        for k in ("start", "end"):
            if k in sc:
                sc[k] = _date(sc[k], f"scenario.{k}")
        scenario = ScenarioConfig(**sc)

    return ExperimentConfig(species, paths, inp, out, split, model, loss, train, eval_ssim, scenario, doc)


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides; values are parsed as YAML scalars."""
    doc = yaml.safe_load(yaml.safe_dump(doc))  # deep copy
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key.path=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override '{key}' descends into a non-mapping")
        node[parts[-1]] = yaml.safe_load(value)
    return doc


def load(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return from_dict(apply_overrides(doc, overrides or []))


def dump(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.raw, sort_keys=False)
