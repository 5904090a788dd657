"""Deterministic CAMS-like daily archives and metric fixtures.

Each variable is ``base + seasonal + diurnal + amp * F_k`` (PM: multiplicative,
so it stays positive), where ``F_k`` is a smooth unit-variance pattern rolled
by the advection velocity once per 6-hour step::

    F_k = sqrt(1 - a^2) * roll(S, k * v) + a * N_k

``S`` and ``N_k`` are Gaussian-filtered white noise drawn from numpy's PCG64
seeded with ``SeedSequence([seed, variable_index, stream])``; ``stream`` is
``-1`` for ``S`` and the frame index for ``N_k``. Every frame is therefore
computable on its own, independent of generation order. With ``a = 0`` and no
seasonal/diurnal terms, frame k+1 is exactly frame k rolled by ``v``.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .ingest import (
    ANALYSIS_HOURS,
    GLOBAL_DOMAIN,
    INPUT_DOMAIN,
    OUTPUT_DOMAIN,
    PM_SPECIES,
    AnalysisFrame,
    CatalogEntry,
    GridDomain,
    VariableSet,
    centered_subdomain,
    date_range,
    resolve_window,
    scan_archive,
    write_day,
)


@dataclass(frozen=True)
class FieldSpec:
    base: float
    spatial_amp: float
    seasonal_amp: float = 0.0
    diurnal_amp: float = 0.0
    corr_length: float = 6.0
    velocity: tuple[int, int] = (0, 0)
    noise: float = 0.0
    units: str = ""


DEFAULT_FIELDS: dict[str, FieldSpec] = {
    "t2m": FieldSpec(288.0, 8.0, 6.0, 4.0, 10.0, (0, 1), 0.05, "K"),
    "d2m": FieldSpec(280.0, 7.0, 5.0, 2.0, 10.0, (0, 1), 0.05, "K"),
    "u10": FieldSpec(0.0, 5.0, 0.0, 1.0, 8.0, (0, 1), 0.1, "m s**-1"),
    "v10": FieldSpec(0.0, 4.0, 0.0, 1.0, 8.0, (0, 1), 0.1, "m s**-1"),
    "msl": FieldSpec(101325.0, 900.0, 300.0, 100.0, 14.0, (0, 1), 0.05, "Pa"),
    "lsm": FieldSpec(0.5, 0.5, corr_length=12.0, units="(0 - 1)"),
    "z_surface": FieldSpec(3000.0, 2500.0, corr_length=9.0, units="m**2 s**-2"),
    "pm1": FieldSpec(18.0, 0.6, 4.0, 2.0, 6.0, (1, 2), 0.05, "ug m**-3"),
    "pm2p5": FieldSpec(30.0, 0.6, 6.0, 3.0, 6.0, (1, 2), 0.05, "ug m**-3"),
    "pm10": FieldSpec(55.0, 0.7, 10.0, 5.0, 6.0, (1, 2), 0.05, "ug m**-3"),
}

# Reduced grid for desk-scale runs. Not the published geometry.
MINI_GRID = resolve_window(50.0, 12.0, 60.0, 98.0)
MINI_INPUT = resolve_window(43.6, 18.4, 66.4, 91.6)
MINI_OUTPUT = centered_subdomain(MINI_INPUT, 32)

PROFILES: dict[str, tuple[GridDomain, GridDomain, GridDomain]] = {
    "global": (GLOBAL_DOMAIN, INPUT_DOMAIN, OUTPUT_DOMAIN),
    "mini": (MINI_GRID, MINI_INPUT, MINI_OUTPUT),
}


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    start: dt.date = dt.date(2024, 1, 1)
    end: dt.date = dt.date(2024, 1, 3)
    profile: str = "mini"
    pm_units: str = "kg m**-3"
    fields: dict[str, FieldSpec] = field(default_factory=lambda: dict(DEFAULT_FIELDS))
    hours: tuple[int, ...] = ANALYSIS_HOURS

    @property
    def grid(self) -> GridDomain:
        return PROFILES[self.profile][0]

    def pure_advection(self) -> "ScenarioConfig":
        """Same scenario with noise, seasonal and diurnal terms switched off."""
        flds = {
            k: replace(v, noise=0.0, seasonal_amp=0.0, diurnal_amp=0.0) for k, v in self.fields.items()
        }
        return replace(self, fields=flds)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "start": self.start.isoformat(),
            "end": self.end.isoformat(),
            "profile": self.profile,
            "pm_units": self.pm_units,
            "hours": list(self.hours),
        }


def _rng(seed: int, var_index: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, var_index, stream + 1])))


def smooth_field(rng: np.random.Generator, shape: tuple[int, int], corr_length: float) -> np.ndarray:
    f = gaussian_filter(rng.standard_normal(shape), sigma=corr_length, mode="wrap")
    return (f - f.mean()) / f.std()


class FieldSynth:
    def __init__(self, cfg: ScenarioConfig, variables: VariableSet = VariableSet()):
        self.cfg = cfg
        self.variables = variables
        self.shape = cfg.grid.shape
        self.static = {
            name: smooth_field(_rng(cfg.seed, i, -1), self.shape, cfg.fields[name].corr_length)
            for i, name in enumerate(variables)
        }
        self.epoch = dt.datetime.combine(cfg.start, dt.time())

    def pattern(self, name: str, k: int) -> np.ndarray:
        spec = self.cfg.fields[name]
        i = self.variables.index(name)
        vy, vx = spec.velocity
        f = np.roll(self.static[name], (k * vy, k * vx), axis=(0, 1))
        if spec.noise > 0:
            a = spec.noise
            f = np.sqrt(1 - a * a) * f + a * smooth_field(_rng(self.cfg.seed, i, k), self.shape, spec.corr_length)
        return f

    def value(self, name: str, when: dt.datetime) -> np.ndarray:
        spec = self.cfg.fields[name]
        k = int((when - self.epoch).total_seconds() // 21600)
        doy = when.timetuple().tm_yday
        level = (
            spec.base
            + spec.seasonal_amp * np.sin(2 * np.pi * doy / 365.25)
            + spec.diurnal_amp * np.sin(2 * np.pi * when.hour / 24)
        )
        f = self.pattern(name, k)
        if name in PM_SPECIES:
            return level * np.exp(spec.spatial_amp * f)
        if name == "lsm":
            return np.clip(spec.base + spec.spatial_amp * f, 0.0, 1.0)
        return level + spec.spatial_amp * f

    def frame(self, when: dt.datetime) -> AnalysisFrame:
        data = np.stack([self.value(n, when) for n in self.variables]).astype(np.float32)
        units = {n: self.cfg.fields[n].units for n in self.variables}
        return AnalysisFrame(when, data, units)


def generate_archive(cfg: ScenarioConfig, root: str | Path, pattern: str = "%Y-%m-%d.nc") -> list[CatalogEntry]:
    """Write one NetCDF file per day and return the resulting catalog."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    synth = FieldSynth(cfg)
    for day in date_range(cfg.start, cfg.end):
        frames = [synth.frame(dt.datetime.combine(day, dt.time(h))) for h in cfg.hours]
        write_day(
            root / day.strftime(pattern),
            frames,
            cfg.grid,
            pm_units=cfg.pm_units,
            attrs={"synthetic": "true", "grid_profile": cfg.profile, "seed": cfg.seed},
        )
    return scan_archive(root, cfg.start, cfg.end, pattern)


@dataclass
class FixturePair:
    pred: np.ndarray
    target: np.ndarray
    init_time: dt.datetime
    rmse: float
    mae: float
    bias: float


def make_fixture_pairs(
    n: int,
    shape: tuple[int, int] = (128, 128),
    kind: str = "offset",
    magnitude: float = 2.0,
    seed: int = 0,
    start: dt.datetime = dt.datetime(2024, 1, 1, 0),
) -> list[FixturePair]:
    """Pairs with closed-form RMSE/MAE/Bias.

    ``offset``: pred = target + c_i with c_i = magnitude * (i + 1).
    ``checkerboard``: pred = target +/- magnitude on alternating pixels.
    ``mixed``: even pairs offset, odd pairs checkerboard.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    yy, xx = np.indices(shape)
    sign = np.where((yy + xx) % 2 == 0, 1.0, -1.0)
    out = []
    for i in range(n):
        target = 20.0 + 10.0 * rng.random(shape)
        this = kind if kind != "mixed" else ("offset" if i % 2 == 0 else "checkerboard")
        if this == "offset":
            c = magnitude * (i + 1)
            err, rmse, mae, bias = np.full(shape, c), abs(c), abs(c), c
        elif this == "checkerboard":
            err = magnitude * sign
            rmse, mae = magnitude, magnitude
            bias = float(err.mean())
        else:
            raise ValueError(f"unknown fixture kind '{kind}'")
        out.append(FixturePair(target + err, target, start + dt.timedelta(hours=6 * i), rmse, mae, bias))
    return out
