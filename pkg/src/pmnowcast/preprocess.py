"""Normalization, 6-hour sample pairing and train/val/test splitting."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import torch
from torch.utils.data import Dataset

from .errors import ConfigError, InvalidStatsError, NoDataError
from .ingest import (
    INPUT_DOMAIN,
    OUTPUT_DOMAIN,
    PM_SPECIES,
    AnalysisFrame,
    CatalogEntry,
    GridDomain,
    VariableSet,
    read_day,
)

log = logging.getLogger(__name__)

LEAD = dt.timedelta(hours=6)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-variable global absolute maxima, in physical units."""

    maxima: tuple[float, ...]
    variables: tuple[str, ...] = VariableSet().names
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        m = np.asarray(self.maxima, dtype=np.float64)
        if m.shape != (len(self.variables),):
            raise InvalidStatsError("one maximum per variable is required")
        if not (np.isfinite(m).all() and (m > 0).all()):
            bad = [v for v, x in zip(self.variables, m) if not (np.isfinite(x) and x > 0)]
            raise InvalidStatsError(f"statistics must be positive and finite: {bad}")

    def __getitem__(self, name: str) -> float:
        return float(self.maxima[self.variables.index(name)])

    def as_array(self) -> np.ndarray:
        return np.asarray(self.maxima, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "variables": {v: float(x) for v, x in zip(self.variables, self.maxima)},
            "provenance": self.provenance,
        }

    def digest(self) -> str:
        """Content hash of the maxima; checkpoints carry it to pin their stats."""
        payload = json.dumps({v: repr(float(x)) for v, x in zip(self.variables, self.maxima)})
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n")
        return path

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        names = tuple(d["variables"].keys())
        return cls(tuple(float(x) for x in d["variables"].values()), names, d.get("provenance", {}))

    @classmethod
    def load(cls, path: str | Path) -> "NormalizationStats":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _in_range(entry: CatalogEntry, start: dt.date | None, end: dt.date | None) -> bool:
    return (start is None or entry.date >= start) and (end is None or entry.date <= end)


def _day_absmax(args) -> tuple[np.ndarray, int]:
    path, variables, domain = args
    frames = read_day(path, variables, domain)
    if not frames:
        return np.zeros(len(variables)), 0
    stack = np.stack([f.data for f in frames])
    return np.abs(stack).max(axis=(0, 2, 3)).astype(np.float64), len(frames)


def compute_stats(
    catalog: Sequence[CatalogEntry],
    start: dt.date | None = None,
    end: dt.date | None = None,
    domain: GridDomain = INPUT_DOMAIN,
    variables: VariableSet = VariableSet(),
    workers: int = 1,
) -> NormalizationStats:
    """Max |value| per variable over every frame and window pixel in range."""
    jobs = [
        (e.path, variables, domain)
        for e in catalog
        if e.path is not None and e.timestamps and _in_range(e, start, end)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_day_absmax, jobs))
    else:
        parts = [_day_absmax(j) for j in jobs]
    n_frames = sum(n for _, n in parts)
    if n_frames == 0:
        raise NoDataError("no readable frames in the requested date range")
    maxima = np.max(np.stack([m for m, n in parts if n]), axis=0)
    dates = sorted(e.date for e in catalog if _in_range(e, start, end))
    provenance = {
        "start": (start or dates[0]).isoformat(),
        "end": (end or dates[-1]).isoformat(),
        "file_count": len(jobs),
        "frame_count": n_frames,
    }
    try:
        return NormalizationStats(tuple(maxima.tolist()), variables.names, provenance)
    except InvalidStatsError as exc:
        raise NoDataError(f"degenerate archive: {exc}") from exc


def normalize(frame: AnalysisFrame | np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Divide each channel by its statistic. Values above the maxima are not clipped."""
    data = frame.data if isinstance(frame, AnalysisFrame) else np.asarray(frame)
    scale = stats.as_array().astype(data.dtype if data.dtype.kind == "f" else np.float64)
    return data / scale[:, None, None]


def denormalize(field_, species: str, stats: NormalizationStats):
    """Multiply a normalized PM field back to ug/m3. Works on arrays and tensors."""
    if species not in PM_SPECIES:
        raise ValueError(f"'{species}' is not a PM species")
    return field_ * stats[species]


@dataclass(frozen=True)
class Sample:
    """Index entry for one (input at t, species target at t+6h) pair.

    Arrays are materialised by :class:`SampleDataset`, so a multi-year index
    stays small in memory.
    """

    init_time: dt.datetime
    species: str
    input_path: Path
    target_path: Path

    @property
    def target_time(self) -> dt.datetime:
        return self.init_time + LEAD


def pair_times(catalog: Sequence[CatalogEntry]) -> tuple[list[tuple[dt.datetime, Path, Path]], int]:
    """All (t, path(t), path(t+6h)) with an existing successor, and the drop count."""
    where = {t: e.path for e in catalog for t in e.timestamps}
    pairs, dropped = [], 0
    for t in sorted(where):
        succ = t + LEAD
        if succ in where:
            pairs.append((t, where[t], where[succ]))
        else:
            dropped += 1
    return pairs, dropped


def build_samples(catalog: Sequence[CatalogEntry], species: str) -> list[Sample]:
    if species not in PM_SPECIES:
        raise ValueError(f"'{species}' is not a PM species")
    pairs, dropped = pair_times(catalog)
    if dropped:
        log.info("dropped %d analysis times without a t+6h successor", dropped)
    return [Sample(t, species, p_in, p_out) for t, p_in, p_out in pairs]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    val_fraction: float = 0.1
    seed: int = 42
    train_start: dt.date = dt.date(2021, 1, 1)
    train_end: dt.date = dt.date(2023, 12, 31)
    test_start: dt.date = dt.date(2024, 1, 1)
    test_end: dt.date = dt.date(2024, 12, 31)

    def __post_init__(self):
        if abs(self.train_fraction + self.val_fraction - 1.0) > 1e-9:
            raise ConfigError("train_fraction + val_fraction must equal 1")
        if not (self.train_end < self.test_start or self.test_end < self.train_start):
            raise ConfigError("train/val and test date ranges overlap")


SplitRole = Literal["train", "val", "test"]


@dataclass(frozen=True)
class Split:
    role: SplitRole
    samples: tuple[Sample, ...]

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


def split_samples(samples: Sequence[Sample], spec: SplitSpec = SplitSpec()) -> tuple[Split, Split, Split]:
    """Shuffled train/val partition of the training years; test years in time order."""
    # pairs whose target falls outside the training years are dropped so no
    # target field is shared with the test year
    pool = [
        s
        for s in samples
        if spec.train_start <= s.init_time.date() <= spec.train_end
        and s.target_time.date() <= spec.train_end
    ]
    test = [s for s in samples if spec.test_start <= s.init_time.date() <= spec.test_end]
    n_train = int(np.floor(spec.train_fraction * len(pool) + 0.5))
    perm = np.random.default_rng(spec.seed).permutation(len(pool))
    train = tuple(pool[i] for i in sorted(perm[:n_train]))
    val = tuple(pool[i] for i in sorted(perm[n_train:]))
    test = tuple(sorted(test, key=lambda s: s.init_time))
    for name, part in (("train", train), ("val", val), ("test", test)):
        if not part:
            raise ConfigError(f"{name} split is empty")
    return Split("train", train), Split("val", val), Split("test", test)


class FrameStore:
    """Normalized frames on demand, with a small per-file cache."""

    def __init__(
        self,
        stats: NormalizationStats,
        domain: GridDomain = INPUT_DOMAIN,
        variables: VariableSet = VariableSet(),
        cache_files: int = 8,
    ):
        self.stats = stats
        self.domain = domain
        self.variables = variables
        self.cache_files = cache_files
        self._cache: OrderedDict[Path, dict[dt.datetime, np.ndarray]] = OrderedDict()

    def frame(self, path: Path, when: dt.datetime) -> np.ndarray:
        day = self._cache.get(path)
        if day is None:
            day = {f.timestamp: normalize(f, self.stats) for f in read_day(path, self.variables, self.domain)}
            self._cache[path] = day
            while len(self._cache) > self.cache_files:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(path)
        return day[when]


class SampleDataset(Dataset):
    """Torch view of a split: ``(input (T,10,H,W), target (1,h,w))`` float32."""

    def __init__(self, split: Split, store: FrameStore, output_domain: GridDomain = OUTPUT_DOMAIN):
        self.split = split
        self.store = store
        self.output_domain = output_domain
        self.channel = store.variables.index(split.samples[0].species) if len(split) else -1

    def __len__(self):
        return len(self.split)

    def arrays(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        s = self.split.samples[i]
        x = self.store.frame(s.input_path, s.init_time)
        y = self.store.frame(s.target_path, s.target_time)[self.channel]
        y = self.output_domain.crop_from(self.store.domain, y)
        return x[None].astype(np.float32), y[None].astype(np.float32)

    def __getitem__(self, i: int):
        x, y = self.arrays(i)
        return torch.from_numpy(np.ascontiguousarray(x)), torch.from_numpy(np.ascontiguousarray(y))


def write_manifest(splits: Sequence[Split], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["init_time", "species", "input_path", "target_path", "target_time", "split"])
        for split in splits:
            for s in split:
                w.writerow([
                    s.init_time.isoformat(),
                    s.species,
                    str(s.input_path),
                    str(s.target_path),
                    s.target_time.isoformat(),
                    split.role,
                ])
    return path
