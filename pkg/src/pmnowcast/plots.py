"""Static figures: monthly NRMSE/SSIM lines and diverging mean-bias maps."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import BiasMap, MetricsReport  # noqa: E402
from .reference import DISPLAY_NAMES  # noqa: E402

BIAS_CMAP = "RdBu_r"


def plot_monthly(reports: Sequence[MetricsReport], out_dir: str | Path) -> list[Path]:
    """One NRMSE and one SSIM chart per species; models share the axes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for species in sorted({r.species for r in reports}):
        group = [r for r in reports if r.species == species]
        for metric, label in (("nrmse", "NRMSE"), ("ssim", "SSIM")):
            fig, ax = plt.subplots(figsize=(7, 3.5))
            for rep in group:
                months = [m["month"] for m in rep.monthly]
                ax.plot(months, [m[metric] for m in rep.monthly], marker="o", label=DISPLAY_NAMES.get(rep.model, rep.model))
            ax.set_title(f"{species} monthly {label}")
            ax.set_ylabel(label)
            ax.tick_params(axis="x", rotation=45)
            ax.legend(fontsize="small")
            fig.tight_layout()
            path = out_dir / f"monthly_{metric}_{species}.png"
            fig.savefig(path, dpi=100)
            plt.close(fig)
            written.append(path)
    return written


def bias_limits(field: np.ndarray) -> tuple[float, float]:
    """Symmetric colour limits so that zero maps to the colormap midpoint."""
    vmax = float(np.nanmax(np.abs(field))) if field.size else 0.0
    if vmax == 0.0:
        vmax = 1.0
    return -vmax, vmax


def plot_bias_map(bias: BiasMap, path: str | Path, title: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vmin, vmax = bias_limits(bias.field)
    extent = None
    if bias.domain is not None:
        d = bias.domain
        extent = (d.lon_start, d.lon_end, d.lat_end, d.lat_start)
    elif bias.coords is not None:
        lat, lon = bias.coords
        extent = (float(lon[0]), float(lon[-1]), float(lat[-1]), float(lat[0]))
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(bias.field, cmap=BIAS_CMAP, vmin=vmin, vmax=vmax, extent=extent, origin="upper")
    fig.colorbar(im, ax=ax, label="prediction - target (ug m-3)")
    ax.set_title(title or f"{bias.species} mean bias")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
