"""Physical-unit verification: RMSE/MAE/Bias/SSIM by init hour, diurnal pooling,
monthly NRMSE/SSIM and spatial mean-bias maps.

All aggregation goes through per-sample records (sums are order independent),
so results do not depend on batch size or inference order.
"""

from __future__ import annotations

import calendar
import csv
import datetime as dt
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import netCDF4
import numpy as np
import torch
from torch.utils.data import DataLoader

from .errors import CheckpointError, ConfigError, UnitError
from .ingest import ANALYSIS_HOURS, PM_UNITS, GridDomain, _normalise_unit
from .losses import SsimConfig, ssim
from .preprocess import NormalizationStats, SampleDataset, denormalize
from .reference import DISPLAY_NAMES, published_baselines

log = logging.getLogger(__name__)

METRICS = ("rmse", "mae", "bias", "ssim")


@dataclass(frozen=True)
class SampleRecord:
    init_time: dt.datetime
    rmse: float
    mae: float
    bias: float
    ssim: float
    target_mean: float
    n_pixels: int


def _pool(records: Sequence[SampleRecord]) -> dict:
    n = sum(r.n_pixels for r in records)
    sse = math.fsum(r.rmse**2 * r.n_pixels for r in records)
    return {
        "rmse": math.sqrt(sse / n),
        "mae": math.fsum(r.mae * r.n_pixels for r in records) / n,
        "bias": math.fsum(r.bias * r.n_pixels for r in records) / n,
        "ssim": math.fsum(r.ssim for r in records) / len(records),
        "target_mean": math.fsum(r.target_mean * r.n_pixels for r in records) / n,
        "n_samples": len(records),
    }


def _expected_times(year: int, month: int, start: dt.date | None, end: dt.date | None) -> int:
    days = calendar.monthrange(year, month)[1]
    first, last = dt.date(year, month, 1), dt.date(year, month, days)
    if start is not None:
        first = max(first, start)
    if end is not None:
        last = min(last, end)
    return max(0, ((last - first).days + 1) * len(ANALYSIS_HOURS))


def monthly_series(
    records: Sequence[SampleRecord],
    start: dt.date | None = None,
    end: dt.date | None = None,
) -> list[dict]:
    """Per calendar month: pooled RMSE / pooled target mean, and mean SSIM."""
    by_month: dict[tuple[int, int], list[SampleRecord]] = {}
    for r in records:
        by_month.setdefault((r.init_time.year, r.init_time.month), []).append(r)
    out = []
    for (y, m) in sorted(by_month):
        p = _pool(by_month[(y, m)])
        expected = _expected_times(y, m, start, end)
        out.append({
            "month": f"{y:04d}-{m:02d}",
            "nrmse": p["rmse"] / p["target_mean"],
            "ssim": p["ssim"],
            "n_samples": p["n_samples"],
            "coverage": p["n_samples"] / expected if expected else None,
        })
    return out


@dataclass
class MetricsReport:
    species: str
    model: str
    by_hour: dict[int, dict]
    diurnal: dict
    monthly: list[dict]
    ssim_convention: dict
    units: str = PM_UNITS
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["by_hour"] = {f"{h:02d}": v for h, v in self.by_hour.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["by_hour"] = {int(h): v for h, v in d["by_hour"].items()}
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "MetricsReport":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed report {path}: {exc}") from exc


def evaluation_data_range(targets: np.ndarray) -> float:
    """Dynamic range used for physical-space SSIM."""
    rng = float(np.max(targets) - np.min(targets))
    return rng if rng > 0 else 1.0


def sample_records(
    predictions: np.ndarray,
    targets: np.ndarray,
    init_times: Sequence[dt.datetime],
    ssim_cfg: SsimConfig,
) -> list[SampleRecord]:
    pred = np.asarray(predictions, dtype=np.float64)
    targ = np.asarray(targets, dtype=np.float64)
    err = pred - targ
    n = err[0].size
    s = ssim(torch.from_numpy(pred), torch.from_numpy(targ), ssim_cfg, reduction="none").numpy()
    return [
        SampleRecord(
            init_times[i],
            float(np.sqrt(np.mean(err[i] ** 2))),
            float(np.mean(np.abs(err[i]))),
            float(np.mean(err[i])),
            float(s[i]),
            float(np.mean(targ[i])),
            n,
        )
        for i in range(len(init_times))
    ]


def report_from_records(
    records: Sequence[SampleRecord],
    species: str,
    model: str,
    ssim_cfg: SsimConfig,
    start: dt.date | None = None,
    end: dt.date | None = None,
) -> MetricsReport:
    by_hour = {}
    for h in ANALYSIS_HOURS:
        group = [r for r in records if r.init_time.hour == h]
        if not group:
            log.warning("no samples initialised at %02d UTC; row omitted", h)
            continue
        by_hour[h] = _pool(group)
    return MetricsReport(
        species=species,
        model=model,
        by_hour=by_hour,
        diurnal=_pool(records),
        monthly=monthly_series(records, start, end),
        ssim_convention={
            "space": "physical",
            "data_range": ssim_cfg.data_range,
            "window": ssim_cfg.window_size,
            "sigma": ssim_cfg.sigma,
            "padding": "reflect",
        },
    )


def compute_metrics(
    predictions: np.ndarray,
    targets: np.ndarray,
    init_times: Sequence[dt.datetime],
    species: str,
    model: str = "model",
    units: str = PM_UNITS,
    ssim_cfg: SsimConfig | None = None,
) -> MetricsReport:
    """Metrics for ``(N, H, W)`` physical-unit predictions and targets."""
    if _normalise_unit(units) != _normalise_unit(PM_UNITS):
        raise UnitError(f"metrics need {PM_UNITS}, got '{units}'")
    if np.shape(predictions) != np.shape(targets) or len(init_times) != len(targets):
        raise ValueError("predictions, targets and init_times must align")
    if ssim_cfg is None:
        ssim_cfg = SsimConfig(data_range=evaluation_data_range(targets))
    records = sample_records(predictions, targets, init_times, ssim_cfg)
    return report_from_records(records, species, model, ssim_cfg)


@dataclass
class BiasMap:
    field: np.ndarray
    domain: GridDomain | None = None
    species: str = ""
    n_samples: int = 0
    coords: tuple[np.ndarray, np.ndarray] | None = None

    def to_netcdf(self, path: str | Path) -> Path:
        path = Path(path)
        ny, nx = self.field.shape
        with netCDF4.Dataset(path, "w", format="NETCDF4") as ds:
            ds.createDimension("latitude", ny)
            ds.createDimension("longitude", nx)
            if self.domain is not None:
                la = ds.createVariable("latitude", "f8", ("latitude",))
                la.units = "degrees_north"
                la[:] = self.domain.latitudes()
                lo = ds.createVariable("longitude", "f8", ("longitude",))
                lo.units = "degrees_east"
                lo[:] = self.domain.longitudes()
            v = ds.createVariable("mean_bias", "f8", ("latitude", "longitude"))
            v.units = PM_UNITS
            v.long_name = f"mean (prediction - target) of {self.species}"
            v[:] = self.field
            ds.n_samples = self.n_samples
            ds.species = self.species
        return path

    @classmethod
    def from_netcdf(cls, path: str | Path) -> "BiasMap":
        with netCDF4.Dataset(path) as ds:
            f = np.asarray(ds["mean_bias"][:], dtype=np.float64)
            lat = np.asarray(ds["latitude"][:]) if "latitude" in ds.variables else None
            lon = np.asarray(ds["longitude"][:]) if "longitude" in ds.variables else None
            coords = (lat, lon) if lat is not None and lon is not None else None
            return cls(f, None, getattr(ds, "species", ""), int(getattr(ds, "n_samples", 0)), coords)


def compute_bias_map(predictions: np.ndarray, targets: np.ndarray, domain: GridDomain | None = None, species: str = "") -> BiasMap:
    err = np.asarray(predictions, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    return BiasMap(err.mean(axis=0), domain, species, err.shape[0])


@torch.no_grad()
def run_inference(model, dataset: SampleDataset, batch_size: int = 8, identity: bool = False):
    """Normalized predictions and targets in dataset order. ``identity`` predicts the target."""
    preds, targs = [], []
    if model is not None:
        model.eval()
        dtype = next(model.parameters()).dtype
    for x, y in DataLoader(dataset, batch_size=batch_size, shuffle=False):
        p = y if identity else model(x.to(dtype))
        preds.append(p[:, 0].double().numpy())
        targs.append(y[:, 0].double().numpy())
    return np.concatenate(preds), np.concatenate(targs)


@dataclass
class EvaluationResult:
    report: MetricsReport
    bias_map: BiasMap
    records: list[SampleRecord]


def write_records(records: Sequence[SampleRecord], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["init_time", "rmse", "mae", "bias", "ssim", "target_mean", "n_pixels"])
        for r in records:
            w.writerow([r.init_time.isoformat(), repr(r.rmse), repr(r.mae), repr(r.bias), repr(r.ssim), repr(r.target_mean), r.n_pixels])
    return path


def read_records(path: str | Path) -> list[SampleRecord]:
    with Path(path).open() as fh:
        return [
            SampleRecord(
                dt.datetime.fromisoformat(r["init_time"]),
                float(r["rmse"]),
                float(r["mae"]),
                float(r["bias"]),
                float(r["ssim"]),
                float(r["target_mean"]),
                int(r["n_pixels"]),
            )
            for r in csv.DictReader(fh)
        ]


def evaluate_model(
    model,
    meta: dict | None,
    dataset: SampleDataset,
    stats: NormalizationStats,
    model_name: str = "model",
    out_dir: str | Path | None = None,
    identity: bool = False,
    batch_size: int = 8,
    test_range: tuple[dt.date, dt.date] | None = None,
) -> EvaluationResult:
    """Inference over the test split in time order, then physical-unit metrics.

    ``meta`` is the checkpoint metadata from :func:`pmnowcast.models.load_weights`;
    its species and stats digest must agree with the request.
    """
    species = dataset.split.samples[0].species
    if meta is not None:
        if meta.get("species") not in (None, species):
            raise CheckpointError(f"checkpoint species {meta['species']} != requested {species}")
        digest = meta.get("stats_digest")
        if digest is not None and digest != stats.digest():
            raise CheckpointError("normalization stats differ from those the checkpoint was trained with")
    if dataset.split.role != "test":
        log.warning("evaluating on the %s split", dataset.split.role)

    p_norm, t_norm = run_inference(model, dataset, batch_size, identity)
    pred = denormalize(p_norm, species, stats)
    targ = denormalize(t_norm, species, stats)
    times = [s.init_time for s in dataset.split.samples]
    ssim_cfg = SsimConfig(data_range=evaluation_data_range(targ))
    records = sample_records(pred, targ, times, ssim_cfg)
    start, end = test_range if test_range else (None, None)
    report = report_from_records(records, species, model_name, ssim_cfg, start, end)
    bias = compute_bias_map(pred, targ, dataset.output_domain, species)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.save(out / f"report_{species}.json")
        write_records(records, out / f"records_{species}.csv")
        bias.to_netcdf(out / f"bias_{species}.nc")
        (out / f"table_{species}.txt").write_text(render_table({model_name: report}, species))
    return EvaluationResult(report, bias, records)


GROUP_HEADERS = (("12utc", "12:00 UTC Input"), ("diurnal", "Diurnal Average"))


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.2f}"


def render_table(reports: dict[str, MetricsReport], species: str, baseline_models: Sequence[str] = ("aurora",)) -> str:
    """Text table: published baseline rows verbatim, then one row per report."""
    rows = []
    published = [b for b in published_baselines() if b.species == species]
    for name in baseline_models:
        cells = []
        for group, _ in GROUP_HEADERS:
            hit = next((b for b in published if b.model == name and b.group == group), None)
            cells.extend(hit.printed if hit else ("-",) * 4)
        rows.append((DISPLAY_NAMES.get(name, name), cells))
    for name, rep in reports.items():
        noon = rep.by_hour.get(12)
        cells = [_fmt(noon[m]) if noon else "-" for m in METRICS]
        cells += [_fmt(rep.diurnal[m]) for m in METRICS]
        rows.append((DISPLAY_NAMES.get(name, name), cells))

    width = max([len("Model")] + [len(r[0]) for r in rows])
    col = 7
    head1 = " " * width + " | " + " | ".join(h.center(4 * col + 3) for _, h in GROUP_HEADERS)
    sub = " ".join(m.upper().rjust(col) for m in METRICS)
    head2 = "Model".ljust(width) + " | " + " | ".join(sub for _ in GROUP_HEADERS)
    lines = [f"{species} evaluation metrics (RMSE/MAE/Bias in ug m-3)", head1, head2, "-" * len(head2)]
    for name, cells in rows:
        a = " ".join(c.rjust(col) for c in cells[:4])
        b = " ".join(c.rjust(col) for c in cells[4:])
        lines.append(f"{name.ljust(width)} | {a} | {b}")
    return "\n".join(lines) + "\n"
