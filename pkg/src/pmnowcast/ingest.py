"""Reading daily CAMS-style NetCDF files and extracting fixed spatial windows.

Global grid convention: latitudes run 90 -> -90 (451 rows), longitudes run
0 -> 359.6 (900 columns), 0.4 degree spacing. Windows are described by
:class:`GridDomain` and located in each file by coordinate value, so reduced
synthetic grids that lie on the same lattice work unchanged.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import netCDF4
import numpy as np

from .errors import (
    AlignmentError,
    ArchiveIOError,
    BoundsError,
    DataQualityError,
    SchemaError,
    UnitError,
)

log = logging.getLogger(__name__)

VARIABLES: tuple[str, ...] = (
    "t2m",
    "d2m",
    "u10",
    "v10",
    "msl",
    "lsm",
    "z_surface",
    "pm1",
    "pm2p5",
    "pm10",
)
PM_SPECIES: tuple[str, ...] = ("pm1", "pm2p5", "pm10")

# Names seen in ADS downloads, mapped to canonical identifiers.
ALIASES: dict[str, tuple[str, ...]] = {
    "t2m": ("t2m", "2t", "2m_temperature"),
    "d2m": ("d2m", "2d", "2m_dewpoint_temperature"),
    "u10": ("u10", "10u", "10m_u_component_of_wind"),
    "v10": ("v10", "10v", "10m_v_component_of_wind"),
    "msl": ("msl", "mean_sea_level_pressure"),
    "lsm": ("lsm", "land_sea_mask"),
    "z_surface": ("z_surface", "z", "geopotential", "surface_geopotential"),
    "pm1": ("pm1", "particulate_matter_1um"),
    "pm2p5": ("pm2p5", "particulate_matter_2.5um", "pm2.5"),
    "pm10": ("pm10", "particulate_matter_10um"),
    "latitude": ("latitude", "lat"),
    "longitude": ("longitude", "lon"),
    "time": ("time", "valid_time"),
}

ANALYSIS_HOURS = (0, 6, 12, 18)
RESOLUTION = 0.4
GLOBAL_N_LAT = 451
GLOBAL_N_LON = 900
PM_UNITS = "ug m**-3"
TIME_UNITS = "hours since 1900-01-01 00:00:00.0"
_TOL = 1e-6


@dataclass(frozen=True)
class VariableSet:
    names: tuple[str, ...] = VARIABLES

    def __post_init__(self):
        if len(self.names) != 10 or len(set(self.names)) != 10:
            raise ValueError("a VariableSet holds exactly 10 distinct names")
        if tuple(self.names[-3:]) != PM_SPECIES:
            raise ValueError("PM variables must occupy the last three channels")
        unknown = set(self.names) - set(VARIABLES)
        if unknown:
            raise ValueError(f"unknown variables: {sorted(unknown)}")

    def index(self, name: str) -> int:
        return self.names.index(name)

    def __iter__(self):
        return iter(self.names)

    def __len__(self):
        return len(self.names)


@dataclass(frozen=True)
class GridDomain:
    """A lat/lon window on the global 0.4 degree grid.

    ``lat_start`` is the northern edge (row 0), ``lat_end`` the southern edge.
    """

    lat_start: float
    lat_end: float
    lon_start: float
    lon_end: float
    resolution: float
    n_lat: int
    n_lon: int
    lat_index_start: int
    lon_index_start: int

    @property
    def lat_index_stop(self) -> int:
        return self.lat_index_start + self.n_lat

    @property
    def lon_index_stop(self) -> int:
        return self.lon_index_start + self.n_lon

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_lat, self.n_lon)

    def latitudes(self) -> np.ndarray:
        return np.round(self.lat_start - self.resolution * np.arange(self.n_lat), 6)

    def longitudes(self) -> np.ndarray:
        return np.round(self.lon_start + self.resolution * np.arange(self.n_lon), 6)

    def offset_in(self, outer: "GridDomain") -> tuple[int, int]:
        """Row/column offset of this window inside ``outer``."""
        r = self.lat_index_start - outer.lat_index_start
        c = self.lon_index_start - outer.lon_index_start
        if r < 0 or c < 0 or r + self.n_lat > outer.n_lat or c + self.n_lon > outer.n_lon:
            raise BoundsError("window does not lie inside the outer domain")
        return r, c

    def crop_from(self, outer: "GridDomain", field_: np.ndarray) -> np.ndarray:
        """Slice this window out of an array laid out on ``outer`` (last two axes)."""
        r, c = self.offset_in(outer)
        return field_[..., r : r + self.n_lat, c : c + self.n_lon]

    def to_dict(self) -> dict:
        return {
            "lat_start": self.lat_start,
            "lat_end": self.lat_end,
            "lon_start": self.lon_start,
            "lon_end": self.lon_end,
            "resolution": self.resolution,
        }


def _grid_index(value: float, origin: float, resolution: float, what: str) -> int:
    x = (value - origin) / resolution
    idx = int(round(x))
    if abs(x - idx) > _TOL * max(1.0, abs(x)):
        raise AlignmentError(f"{what} {value} is not a multiple of {resolution} degrees")
    return idx


def resolve_window(
    lat_start: float,
    lat_end: float,
    lon_start: float,
    lon_end: float,
    resolution: float = RESOLUTION,
) -> GridDomain:
    """Map lat/lon bounds (inclusive) to index ranges into the global grid."""
    north, south = max(lat_start, lat_end), min(lat_start, lat_end)
    if lon_start > lon_end:
        raise BoundsError("longitude windows crossing the dateline are not supported")
    n_global_lat = int(round(180.0 / resolution)) + 1
    n_global_lon = int(round(360.0 / resolution))
    r0 = _grid_index(90.0 - north, 0.0, resolution, "latitude")
    r1 = _grid_index(90.0 - south, 0.0, resolution, "latitude")
    c0 = _grid_index(lon_start, 0.0, resolution, "longitude")
    c1 = _grid_index(lon_end, 0.0, resolution, "longitude")
    if r0 < 0 or r1 >= n_global_lat:
        raise BoundsError(f"latitude window {north}..{south} exceeds the global grid")
    if c0 < 0 or c1 >= n_global_lon:
        raise BoundsError(f"longitude window {lon_start}..{lon_end} exceeds the global grid")
    return GridDomain(
        lat_start=float(north),
        lat_end=float(south),
        lon_start=float(lon_start),
        lon_end=float(lon_end),
        resolution=resolution,
        n_lat=r1 - r0 + 1,
        n_lon=c1 - c0 + 1,
        lat_index_start=r0,
        lon_index_start=c0,
    )


def centered_subdomain(outer: GridDomain, n_lat: int, n_lon: int | None = None) -> GridDomain:
    """The centred ``n_lat`` x ``n_lon`` window of ``outer``."""
    n_lon = n_lat if n_lon is None else n_lon
    if (outer.n_lat - n_lat) % 2 or (outer.n_lon - n_lon) % 2:
        raise BoundsError("centred crop needs an even margin")
    dr, dc = (outer.n_lat - n_lat) // 2, (outer.n_lon - n_lon) // 2
    res = outer.resolution
    north = round(outer.lat_start - dr * res, 6)
    west = round(outer.lon_start + dc * res, 6)
    return resolve_window(
        north, round(north - (n_lat - 1) * res, 6), west, round(west + (n_lon - 1) * res, 6), res
    )


INPUT_DOMAIN = resolve_window(73.6, -28.4, 32.0, 134.0)
OUTPUT_DOMAIN = resolve_window(48.0, -2.8, 57.6, 108.4)
GLOBAL_DOMAIN = resolve_window(90.0, -90.0, 0.0, 359.6)


@dataclass
class AnalysisFrame:
    """One analysis time: a (10, n_lat, n_lon) stack in physical units."""

    timestamp: dt.datetime
    data: np.ndarray
    units: dict[str, str] = field(default_factory=dict)

    def channel(self, name: str, variables: VariableSet = VariableSet()) -> np.ndarray:
        return self.data[variables.index(name)]


def _find(ds: netCDF4.Dataset, canonical: str) -> netCDF4.Variable:
    for name in ALIASES.get(canonical, (canonical,)):
        if name in ds.variables:
            return ds.variables[name]
    raise SchemaError(f"variable '{canonical}' not found")


def _normalise_unit(units: str) -> str:
    return units.lower().replace("µ", "u").replace("**", "").replace("^", "").replace(" ", "")


def pm_scale(units: str | None) -> float:
    """Factor taking a stored PM field to ug/m3."""
    if units is None:
        raise UnitError("PM variable has no units attribute")
    u = _normalise_unit(units)
    if u in ("kgm-3", "kg/m3", "kgm3"):
        return 1e9
    if u in ("ugm-3", "ug/m3", "ugm3", "microgramsm-3", "microgram/m3"):
        return 1.0
    raise UnitError(f"unrecognised PM units '{units}'")


def _locate(coord: np.ndarray, value: float, n: int, what: str) -> int:
    hits = np.flatnonzero(np.abs(coord - value) < 1e-4)
    if hits.size == 0:
        raise BoundsError(f"{what} {value} not present in file coordinates")
    i0 = int(hits[0])
    if i0 + n > coord.size:
        raise BoundsError(f"{what} window runs past the file grid")
    return i0


def read_day(
    path: str | Path,
    variables: VariableSet = VariableSet(),
    domain: GridDomain = INPUT_DOMAIN,
) -> list[AnalysisFrame]:
    """Read every analysis time in one daily file, windowed to ``domain``.

    Frames come back in ascending time order. PM fields stored as kg/m3 are
    converted to ug/m3.
    """
    path = Path(path)
    try:
        ds = netCDF4.Dataset(path, "r")
    except (OSError, RuntimeError) as exc:
        raise ArchiveIOError(f"cannot read {path}: {exc}") from exc
    with ds:
        ds.set_auto_maskandscale(True)
        lat = np.asarray(_find(ds, "latitude")[:], dtype=np.float64)
        lon = np.mod(np.asarray(_find(ds, "longitude")[:], dtype=np.float64), 360.0)
        tvar = _find(ds, "time")
        times = netCDF4.num2date(
            tvar[:],
            tvar.units,
            getattr(tvar, "calendar", "standard"),
            only_use_cftime_datetimes=False,
            only_use_python_datetimes=True,
        )
        times = [dt.datetime(t.year, t.month, t.day, t.hour, t.minute) for t in np.atleast_1d(times)]

        flip = lat.size > 1 and lat[1] > lat[0]
        lat_desc = lat[::-1] if flip else lat
        r0 = _locate(lat_desc, domain.lat_start, domain.n_lat, "latitude")
        c0 = _locate(lon, domain.lon_start, domain.n_lon, "longitude")
        expected = domain.latitudes()
        if not np.allclose(lat_desc[r0 : r0 + domain.n_lat], expected, atol=1e-4):
            raise BoundsError("file latitudes are not on the expected 0.4 degree lattice")
        if not np.allclose(lon[c0 : c0 + domain.n_lon], domain.longitudes(), atol=1e-4):
            raise BoundsError("file longitudes are not contiguous over the window")
        if flip:
            rs = slice(lat.size - r0 - domain.n_lat, lat.size - r0)
        else:
            rs = slice(r0, r0 + domain.n_lat)
        cs = slice(c0, c0 + domain.n_lon)

        stack = np.empty((len(times), len(variables), domain.n_lat, domain.n_lon), np.float32)
        units: dict[str, str] = {}
        for k, name in enumerate(variables):
            var = _find(ds, name)
            raw = var[..., rs, cs]
            raw = np.ma.filled(np.ma.asarray(raw, dtype=np.float64), np.nan)
            raw = raw.reshape(len(times), domain.n_lat, domain.n_lon)
            if flip:
                raw = raw[:, ::-1, :]
            unit = getattr(var, "units", None)
            if name in PM_SPECIES:
                raw = raw * pm_scale(unit)
                unit = PM_UNITS
            units[name] = unit or ""
            stack[:, k] = raw

    frames = []
    for i in np.argsort(np.array(times, dtype="datetime64[m]"), kind="stable"):
        data = stack[i]
        if not np.isfinite(data).all():
            raise DataQualityError(f"{path.name}: non-finite values at {times[i]:%Y-%m-%d %H:%M}")
        frames.append(AnalysisFrame(times[i], data, dict(units)))
    return frames


def write_day(
    path: str | Path,
    frames: Sequence[AnalysisFrame],
    domain: GridDomain,
    variables: VariableSet = VariableSet(),
    pm_units: str = PM_UNITS,
    attrs: dict | None = None,
    compress: bool = True,
) -> Path:
    """Serialise frames laid out on ``domain`` as a daily NetCDF file.

    ``pm_units`` selects the stored PM units ("kg m**-3" stores CAMS-native
    values).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    factor = 1.0 / pm_scale(pm_units)
    with netCDF4.Dataset(path, "w", format="NETCDF4") as ds:
        ds.createDimension("time", None)
        ds.createDimension("latitude", domain.n_lat)
        ds.createDimension("longitude", domain.n_lon)
        t = ds.createVariable("time", "i4", ("time",))
        t.units = TIME_UNITS
        t.calendar = "gregorian"
        t[:] = [int(v) for v in netCDF4.date2num([f.timestamp for f in frames], TIME_UNITS, "gregorian")]
        la = ds.createVariable("latitude", "f4", ("latitude",))
        la.units = "degrees_north"
        la[:] = domain.latitudes()
        lo = ds.createVariable("longitude", "f4", ("longitude",))
        lo.units = "degrees_east"
        lo[:] = domain.longitudes()
        for k, name in enumerate(variables):
            v = ds.createVariable(
                name, "f4", ("time", "latitude", "longitude"), zlib=compress, complevel=1
            )
            block = np.stack([f.data[k] for f in frames]) if frames else np.empty((0,) + domain.shape)
            if name in PM_SPECIES:
                v.units = pm_units
                block = block * factor
            else:
                v.units = (frames[0].units.get(name, "") if frames else "") or _DEFAULT_UNITS[name]
            v[:] = block.astype(np.float32)
        for key, value in (attrs or {}).items():
            ds.setncattr(key, value)
    return path


_DEFAULT_UNITS = {
    "t2m": "K",
    "d2m": "K",
    "u10": "m s**-1",
    "v10": "m s**-1",
    "msl": "Pa",
    "lsm": "(0 - 1)",
    "z_surface": "m**2 s**-2",
}


@dataclass(frozen=True)
class CatalogEntry:
    date: dt.date
    path: Path | None
    timestamps: tuple[dt.datetime, ...]


def file_timestamps(path: Path) -> tuple[dt.datetime, ...]:
    try:
        with netCDF4.Dataset(path, "r") as ds:
            tvar = _find(ds, "time")
            times = netCDF4.num2date(
                tvar[:],
                tvar.units,
                getattr(tvar, "calendar", "standard"),
                only_use_cftime_datetimes=False,
                only_use_python_datetimes=True,
            )
    except (OSError, RuntimeError) as exc:
        raise ArchiveIOError(f"cannot read {path}: {exc}") from exc
    return tuple(sorted(dt.datetime(t.year, t.month, t.day, t.hour, t.minute) for t in np.atleast_1d(times)))


def date_range(start: dt.date, end: dt.date) -> Iterable[dt.date]:
    for k in range((end - start).days + 1):
        yield start + dt.timedelta(days=k)


def scan_archive(
    root: str | Path,
    start: dt.date,
    end: dt.date,
    pattern: str = "%Y-%m-%d.nc",
) -> list[CatalogEntry]:
    """Date-sorted catalog for ``start..end`` inclusive; absent days have no path."""
    root = Path(root)
    if not root.is_dir():
        raise ArchiveIOError(f"archive root {root} does not exist")
    catalog = []
    for day in date_range(start, end):
        p = root / day.strftime(pattern)
        if p.is_file():
            catalog.append(CatalogEntry(day, p, file_timestamps(p)))
        else:
            catalog.append(CatalogEntry(day, None, ()))
    return catalog
