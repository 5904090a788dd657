"""Published reference rows (RMSE/MAE/Bias/SSIM in ug/m3) shipped as CSV."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass
from importlib import resources

from .errors import PMNowcastError

BASELINE_FILE = "published_baselines.csv"
BASELINE_SHA256 = "17d840ef362f1ac2233d0f004bfb79008897b1507047b4102793a0b350ec1d0d"

DISPLAY_NAMES = {
    "aurora": "Aurora",
    "convgru_1": "ConvGRU_1",
    "convgru_2": "ConvGRU_2",
    "convlstm_1": "ConvLSTM_1",
    "convlstm_2": "ConvLSTM_2",
    "unet": "U-Net",
}


@dataclass(frozen=True)
class PublishedBaseline:
    model: str
    species: str
    group: str
    rmse: float
    mae: float
    bias: float
    ssim: float
    printed: tuple[str, str, str, str]
    source: str


def _raw() -> bytes:
    return resources.files("pmnowcast.data").joinpath(BASELINE_FILE).read_bytes()


def verify_checksum(raw: bytes | None = None) -> None:
    digest = hashlib.sha256(_raw() if raw is None else raw).hexdigest()
    if digest != BASELINE_SHA256:
        raise PMNowcastError(f"{BASELINE_FILE} has been modified (sha256 {digest})")


def parse_baselines(raw: bytes) -> list[PublishedBaseline]:
    rows = []
    for r in csv.DictReader(io.StringIO(raw.decode())):
        printed = (r["rmse"], r["mae"], r["bias"], r["ssim"])
        rows.append(
            PublishedBaseline(
                r["model"], r["species"], r["group"], *(float(x) for x in printed), printed, r["source"]
            )
        )
    return rows


def published_baselines() -> list[PublishedBaseline]:
    raw = _raw()
    verify_checksum(raw)
    return parse_baselines(raw)


def lookup(model: str, species: str, group: str) -> PublishedBaseline | None:
    for b in published_baselines():
        if (b.model, b.species, b.group) == (model, species, group):
            return b
    return None


def baselines_to_json(rows: list[PublishedBaseline]) -> str:
    return json.dumps([{**asdict(r), "printed": list(r.printed)} for r in rows], indent=1)


def baselines_from_json(text: str) -> list[PublishedBaseline]:
    return [PublishedBaseline(**{**d, "printed": tuple(d["printed"])}) for d in json.loads(text)]
