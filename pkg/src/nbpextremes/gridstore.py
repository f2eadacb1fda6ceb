"""Gridded monthly fields: container format, CSV ingest, units and cell geometry."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, UnitsError

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_FILL = -9999.0
MASS_UNITS = "gC/month"
FLUX_UNITS = ("kg/m2/s", "kg/m^2/s", "kg/m²/s", "kg m-2 s-1")

HEADER_KEYS = ("name", "units", "t0_year", "t0_month", "n_time", "lats", "lons",
               "fill", "dtype", "byte_order")

# Abbreviation and full name, ids assigned in table order.
SREX_REGIONS = (
    ("ALA", "Alaska/N.W. Canada"),
    ("AMZ", "Amazon"),
    ("CAM", "Central America/Mexico"),
    ("CAS", "Central Asia"),
    ("CEU", "Central Europe"),
    ("CGI", "Canada/Greenland/Iceland"),
    ("CNA", "Central North America"),
    ("EAF", "East Africa"),
    ("EAS", "East Asia"),
    ("ENA", "East North America"),
    ("MED", "South Europe/Mediterranean"),
    ("NAS", "North Asia"),
    ("NAU", "North Australia"),
    ("NEB", "North-East Brazil"),
    ("NEU", "North Europe"),
    ("SAF", "Southern Africa"),
    ("SAH", "Sahara"),
    ("SAS", "South Asia"),
    ("SAU", "South Australia/New Zealand"),
    ("SEA", "Southeast Asia"),
    ("SSA", "Southeastern South America"),
    ("TIB", "Tibetan Plateau"),
    ("WAF", "West Africa"),
    ("WAS", "West Asia"),
    ("WNA", "West North America"),
    ("WSA", "West Coast South America"),
)
SREX_TABLE = {i + 1: entry for i, entry in enumerate(SREX_REGIONS)}


@dataclass(frozen=True)
class CalendarSpec:
    """No-leap calendar with fixed month lengths."""

    convention: str = "noleap"
    month_lengths: tuple = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)

    def __post_init__(self):
        if len(self.month_lengths) != 12 or sum(self.month_lengths) != 365:
            raise DataError("calendar month lengths must be 12 values summing to 365")

    def seconds_in_month(self, month):
        return self.month_lengths[month - 1] * 86400


NOLEAP = CalendarSpec()


def _spacing(coords, what):
    if coords.ndim != 1 or coords.size == 0:
        raise FormatError(f"{what} must be a non-empty 1-d list")
    if coords.size == 1:
        return 1.0
    d = np.diff(coords)
    if np.any(d <= 0):
        raise FormatError(f"{what} must be strictly ascending")
    if not np.allclose(d, d[0], rtol=1e-6, atol=1e-9):
        raise FormatError(f"{what} must be uniformly spaced")
    return float(d[0])


@dataclass(frozen=True, eq=False)
class GridStack:
    """A (time, lat, lon) monthly field. Immutable once constructed."""

    name: str
    units: str
    t0: tuple
    lats: np.ndarray
    lons: np.ndarray
    values: np.ndarray
    fill: float = DEFAULT_FILL
    _land: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lats = np.array(self.lats, dtype=np.float64)
        lons = np.array(self.lons, dtype=np.float64)
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 3 or values.shape[1:] != (lats.size, lons.size):
            raise FormatError(
                f"values shape {values.shape} does not match (time, {lats.size}, {lons.size})")
        _spacing(lats, "lats")
        _spacing(lons, "lons")
        if np.any(lats <= -90) or np.any(lats >= 90):
            raise FormatError("lats must lie strictly inside (-90, 90)")
        if not (np.all((lons >= 0) & (lons < 360)) or np.all((lons >= -180) & (lons < 180))):
            raise FormatError("lons must lie in [0, 360) or [-180, 180)")
        year, month = (int(v) for v in self.t0)
        if not 1 <= month <= 12:
            raise FormatError(f"t0 month {month} outside 1..12")
        if not math.isfinite(self.fill):
            raise FormatError("fill must be finite")
        is_fill = values == self.fill
        land = ~is_fill.any(axis=0)
        partial = is_fill.any(axis=0) & ~is_fill.all(axis=0)
        if np.any(partial):
            i, j = np.argwhere(partial)[0]
            raise FormatError(f"cell ({lats[i]}, {lons[j]}) is fill for only part of the record")
        if not np.all(np.isfinite(values[:, land])):
            raise FormatError("non-finite values in land cells")
        for arr in (lats, lons, values, land):
            arr.flags.writeable = False
        object.__setattr__(self, "lats", lats)
        object.__setattr__(self, "lons", lons)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "t0", (year, month))
        object.__setattr__(self, "fill", float(self.fill))
        object.__setattr__(self, "_land", land)

    @property
    def n_time(self):
        return self.values.shape[0]

    @property
    def shape(self):
        return self.values.shape[1:]

    @property
    def dlat(self):
        return _spacing(self.lats, "lats")

    @property
    def dlon(self):
        return _spacing(self.lons, "lons")

    @property
    def land(self):
        """Boolean (lat, lon) land mask."""
        return self._land

    def land_cells(self):
        """Flat (row-major) indices of land cells, ascending."""
        return np.flatnonzero(self._land.ravel())

    def land_matrix(self):
        """Values at land cells as a (time, n_land) array, cells in flat-index order."""
        return self.values.reshape(self.n_time, -1)[:, self.land_cells()]

    def month_of(self, t):
        """(year, month) of time index t."""
        k = self.t0[1] - 1 + t
        return self.t0[0] + k // 12, k % 12 + 1

    def with_land_matrix(self, matrix, name=None, units=None):
        """New stack on the same grid and land mask holding ``matrix`` at land cells."""
        matrix = np.asarray(matrix, dtype=np.float64)
        cells = self.land_cells()
        if matrix.ndim != 2 or matrix.shape[1] != cells.size:
            raise DataError(f"matrix shape {matrix.shape} does not match {cells.size} land cells")
        flat = np.full((matrix.shape[0], self._land.size), self.fill)
        flat[:, cells] = matrix
        return GridStack(name or self.name, units or self.units, self.t0, self.lats, self.lons,
                         flat.reshape((matrix.shape[0],) + self.shape), self.fill)

    def header(self):
        return {
            "name": self.name,
            "units": self.units,
            "t0_year": self.t0[0],
            "t0_month": self.t0[1],
            "n_time": self.n_time,
            "lats": [float(v) for v in self.lats],
            "lons": [float(v) for v in self.lons],
            "fill": self.fill,
            "dtype": "f64",
            "byte_order": "LE",
        }


def load_gridstack(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}", path) from exc
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("missing header line", path)
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed header: {exc}", path) from exc
    if not isinstance(header, dict) or set(header) != set(HEADER_KEYS):
        raise FormatError(f"header keys must be exactly {', '.join(HEADER_KEYS)}", path)
    if header["dtype"] != "f64" or header["byte_order"] != "LE":
        raise FormatError("only dtype f64, byte_order LE supported", path)
    try:
        n_time = int(header["n_time"])
        lats = np.asarray(header["lats"], dtype=np.float64)
        lons = np.asarray(header["lons"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"malformed header field: {exc}", path) from exc
    if n_time < 1:
        raise FormatError("n_time must be positive", path)
    payload = raw[nl + 1:]
    expected = n_time * lats.size * lons.size * 8
    if len(payload) != expected:
        raise FormatError(f"payload is {len(payload)} bytes, header implies {expected}", path)
    values = np.frombuffer(payload, dtype="<f8").reshape(n_time, lats.size, lons.size)
    try:
        return GridStack(str(header["name"]), str(header["units"]),
                         (header["t0_year"], header["t0_month"]), lats, lons, values,
                         float(header["fill"]))
    except FormatError as exc:
        raise FormatError(str(exc), path) from exc


def save_gridstack(stack, path):
    if not str(path):
        raise DataError("empty output path", path)
    path = Path(path)
    head = json.dumps(stack.header()).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(head + b"\n")
            fh.write(np.ascontiguousarray(stack.values, dtype="<f8").tobytes())
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}", path) from exc


def _uniform_axis(values, what):
    vals = np.unique(np.asarray(values, dtype=np.float64))
    if vals.size == 1:
        return vals
    step = float(np.min(np.diff(vals)))
    n = int(round((vals[-1] - vals[0]) / step)) + 1
    axis = vals[0] + step * np.arange(n)
    idx = np.rint((vals - vals[0]) / step).astype(int)
    if not np.allclose(axis[idx], vals, rtol=0, atol=1e-6 * step):
        raise FormatError(f"{what} values are not on a uniform grid")
    return axis


def ingest_csv(path, name=None, units=MASS_UNITS, fill=DEFAULT_FILL):
    """Read a long-format CSV with columns year, month, lat, lon, value.

    Grid coordinates are inferred from the distinct lat/lon values; grid
    points with no rows become fill cells. Every cell that appears must
    cover the full month range.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            need = {"year", "month", "lat", "lon", "value"}
            if reader.fieldnames is None or not need <= set(reader.fieldnames):
                raise FormatError(f"CSV needs columns {sorted(need)}", path)
            rows = [(int(r["year"]), int(r["month"]), float(r["lat"]), float(r["lon"]),
                     float(r["value"])) for r in reader]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}", path) from exc
    except ValueError as exc:
        raise FormatError(f"bad CSV value: {exc}", path) from exc
    if not rows:
        raise FormatError("CSV has no data rows", path)

    arr = np.array(rows, dtype=np.float64)
    tidx_abs = arr[:, 0].astype(int) * 12 + arr[:, 1].astype(int) - 1
    t_first = int(tidx_abs.min())
    n_time = int(tidx_abs.max()) - t_first + 1
    lats = _uniform_axis(arr[:, 2], "lat")
    lons = _uniform_axis(arr[:, 3], "lon")
    ti = tidx_abs - t_first
    li = np.searchsorted(lats, arr[:, 2] - 1e-9)
    lj = np.searchsorted(lons, arr[:, 3] - 1e-9)

    values = np.full((n_time, lats.size, lons.size), fill)
    seen = np.zeros(values.shape, dtype=bool)
    for k in range(arr.shape[0]):
        key = (ti[k], li[k], lj[k])
        if seen[key]:
            raise FormatError(f"duplicate row for {rows[k][:4]}", path)
        seen[key] = True
        values[key] = arr[k, 4]
    present = seen.any(axis=0)
    ragged = present & ~seen.all(axis=0)
    if np.any(ragged):
        i, j = np.argwhere(ragged)[0]
        raise FormatError(f"cell ({lats[i]}, {lons[j]}) has ragged time coverage", path)
    return GridStack(name or path.stem, units, (t_first // 12, t_first % 12 + 1),
                     lats, lons, values, fill)


def cell_area(lat, dlat, dlon):
    """Area in m² of a lat/lon cell centred at ``lat`` (degrees)."""
    if abs(lat) + dlat / 2 > 90 + 1e-9:
        raise DataError(f"cell at lat {lat} with height {dlat} crosses a pole")
    top = math.radians(min(lat + dlat / 2, 90.0))
    bottom = math.radians(max(lat - dlat / 2, -90.0))
    return EARTH_RADIUS_M ** 2 * math.radians(dlon) * (math.sin(top) - math.sin(bottom))


def grid_areas(stack):
    """(lat, lon) array of cell areas in m²."""
    per_lat = np.array([cell_area(lat, stack.dlat, stack.dlon) for lat in stack.lats])
    return np.repeat(per_lat[:, None], stack.lons.size, axis=1)


def flux_to_mass(stack, areas, calendar=NOLEAP):
    """Convert kg C m⁻² s⁻¹ to gC/month per cell."""
    if stack.units not in FLUX_UNITS:
        raise UnitsError(f"flux_to_mass expects kg/m2/s input, got {stack.units!r}")
    areas = np.asarray(areas, dtype=np.float64)
    if areas.shape != stack.shape:
        raise DataError(f"areas shape {areas.shape} does not match grid {stack.shape}")
    secs = np.array([calendar.seconds_in_month(stack.month_of(t)[1])
                     for t in range(stack.n_time)], dtype=np.float64)
    out = stack.values * areas[None] * secs[:, None, None] * 1000.0
    out[:, ~stack.land] = stack.fill
    return GridStack(stack.name, MASS_UNITS, stack.t0, stack.lats, stack.lons, out, stack.fill)


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Integer region id per cell (0 = unassigned) and id → (abbr, name) table."""

    ids: np.ndarray
    table: dict = field(default_factory=lambda: dict(SREX_TABLE))

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.ndim != 2:
            raise FormatError("region ids must be a (lat, lon) grid")
        if not np.all(ids == np.round(ids)) or np.any(ids < 0):
            raise FormatError("region ids must be non-negative integers")
        ids = ids.astype(np.int64)
        table = {int(k): (str(v[0]), str(v[1])) for k, v in self.table.items()}
        missing = sorted(set(np.unique(ids).tolist()) - {0} - set(table))
        if missing:
            raise FormatError(f"region ids {missing} absent from region table")
        ids.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "table", table)

    def present(self):
        """Region ids with at least one cell, ascending."""
        return [int(r) for r in np.unique(self.ids) if r != 0]

    def abbr(self, region_id):
        return self.table[region_id][0]


def load_region_table(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}", path) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed region table: {exc}", path) from exc
    try:
        return {int(k): (v["abbr"], v["name"]) for k, v in doc.items()}
    except (AttributeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError("region table must map id -> {abbr, name}", path) from exc


def save_region_table(table, path):
    doc = {str(k): {"abbr": a, "name": n} for k, (a, n) in sorted(table.items())}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_region_mask(grid_path, table_path=None):
    stack = load_gridstack(grid_path)
    table = SREX_TABLE if table_path is None else load_region_table(table_path)
    try:
        return RegionMask(stack.values[0], table)
    except FormatError as exc:
        raise FormatError(str(exc), grid_path) from exc


def save_region_mask(mask, lats, lons, grid_path, table_path=None):
    stack = GridStack("regions", "region_id", (1, 1), lats, lons,
                      mask.ids[None].astype(np.float64), DEFAULT_FILL)
    save_gridstack(stack, grid_path)
    if table_path is not None:
        save_region_table(mask.table, table_path)


def region_mask_from_rectangles(rects, lats, lons, table=None):
    """Build a mask from ``[{"id", "lat": [lo, hi], "lon": [lo, hi]}, ...]``.

    Bounds are inclusive of cell centres; later rectangles override earlier ones.
    """
    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)
    ids = np.zeros((lats.size, lons.size), dtype=np.int64)
    for r in rects:
        la = (lats >= r["lat"][0]) & (lats <= r["lat"][1])
        lo = (lons >= r["lon"][0]) & (lons <= r["lon"][1])
        ids[np.ix_(la, lo)] = int(r["id"])
    return RegionMask(ids, SREX_TABLE if table is None else table)
