"""Synthetic NBP and driver grids with known extremes, couplings and sensitivities.

Every stochastic draw for a grid cell comes from a generator seeded by a
splitmix64 hash of (seed, stream id), so each cell's series is independent
of the order or partitioning in which cells are produced.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .attribution import DRIVERS, combo_name
from .errors import ConfigError, DataError
from .gridstore import (MASS_UNITS, SREX_TABLE, GridStack, RegionMask, grid_areas)
from .stats import linear_trend, reduce_sum_deterministic, rowwise_sum

MASK64 = (1 << 64) - 1
DRIVER_UNITS = {"Prcp": "mm/month", "SM": "kg/m2", "TAS": "degC", "Fire": "gC/month"}
# stream ids outside the cell-index range
_STREAM_SELECT = 1 << 40
_STREAM_REGION = 1 << 41


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def substream(seed, stream):
    """Independent generator for ``stream`` under ``seed``."""
    return np.random.default_rng(splitmix64((splitmix64(seed & MASK64) + stream) & MASK64))


@dataclass
class Coupling:
    """Driver anomaly = gain * (NBP injection / amplitude) shifted ``lag`` months earlier."""

    lag: int = 1
    gain: float = 1.0
    noise: float = 0.1


@dataclass
class DriverSpec:
    base: float = 0.0
    cycle_amplitude: float = 0.0
    trend_per_century: float = 0.0
    noise_sigma: float = 1.0
    noise_phi: float = 0.3


def _default_drivers():
    return {
        "Prcp": DriverSpec(base=150.0, cycle_amplitude=60.0, trend_per_century=-5.0,
                           noise_sigma=10.0),
        "SM": DriverSpec(base=300.0, cycle_amplitude=25.0, trend_per_century=-10.0,
                         noise_sigma=3.0),
        "Fire": DriverSpec(base=2e8, cycle_amplitude=1e8, trend_per_century=5e7,
                           noise_sigma=2e7),
    }


@dataclass
class TasSpec:
    base: float = 25.0
    seasonal_amplitude: float = 8.0
    warming_per_century: float = 3.0
    # winter (DJF) warming rate relative to summer (JJA); shoulder seasons take the mean
    winter_warming_ratio: float = 1.0
    regional_sigma: float = 0.6
    regional_phi: float = 0.5
    cell_sigma: float = 0.2


@dataclass
class SynthConfig:
    n_lat: int = 8
    n_lon: int = 8
    lat_start: float = -11.5
    lon_start: float = 290.5
    dlat: float = 1.0
    dlon: float = 1.0
    start_year: int = 1850
    years: int = 100
    seed: int = 0
    window_years: int = 25
    # NBP background, gC/month per cell
    trend_per_century: float = 2e9
    trend_quadratic: float = -1e9
    cycle_amplitude: float = 5e9
    cycle_growth_per_century: float = 0.3
    noise_phi: float = 0.5
    noise_sigma: float = 1e9
    # injected extremes
    extreme_cell_fraction: float = 0.5
    events_per_sign: int = 3
    event_months: int = 4
    amplitude: float = 8e9
    negative_growth: float = 0.0
    positive_growth: float = 0.0
    region_negative_bias: dict = field(default_factory=dict)
    injections: list = field(default_factory=list)
    # driver couplings at every extreme cell, plus extra ones at compound cells
    couplings: dict = field(default_factory=lambda: {"SM": Coupling(1, 30.0, 3.0)})
    compound_fraction: float = 0.0
    compound_couplings: dict = field(default_factory=lambda: {
        "TAS": Coupling(1, -1.5, 0.85), "Fire": Coupling(1, -2e8, 1.15e8)})
    drivers: dict = field(default_factory=_default_drivers)
    tas: TasSpec = field(default_factory=TasSpec)
    # region id -> programmed sensitivity b1 in GgC/month per degC
    sensitivity: dict = field(default_factory=dict)
    region_ids: list = field(default_factory=lambda: [2, 3, 14, 26])
    ocean_cells: list = field(default_factory=list)

    def __post_init__(self):
        self.couplings = {k: _as(Coupling, v) for k, v in self.couplings.items()}
        self.compound_couplings = {k: _as(Coupling, v) for k, v in self.compound_couplings.items()}
        self.drivers = {k: _as(DriverSpec, v) for k, v in self.drivers.items()}
        self.tas = _as(TasSpec, self.tas)
        self.sensitivity = {int(k): float(v) for k, v in self.sensitivity.items()}
        self.region_negative_bias = {int(k): float(v) for k, v in self.region_negative_bias.items()}
        self.validate()

    def validate(self):
        phis = [self.noise_phi, self.tas.regional_phi] + [d.noise_phi for d in self.drivers.values()]
        if any(not 0 <= p < 1 for p in phis):
            raise ConfigError("AR(1) coefficient must lie in [0, 1)")
        if not 0 <= int(self.seed) < 1 << 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.n_lat < 1 or self.n_lon < 1 or self.years < 1:
            raise ConfigError("grid dimensions and years must be positive")
        if self.years % self.window_years:
            raise ConfigError("years must be a whole number of windows")
        for name in list(self.couplings) + list(self.compound_couplings):
            if name not in DRIVERS:
                raise ConfigError(f"unknown driver {name!r}")
        for c in list(self.couplings.values()) + list(self.compound_couplings.values()):
            if not 0 <= c.lag <= 4:
                raise ConfigError("coupling lag must lie in 0..4")
        if len(self.region_ids) != 4:
            raise ConfigError("region_ids must list four ids (one per grid quadrant)")
        slot = 12 * self.window_years // max(1, 2 * self.events_per_sign)
        if self.events_per_sign and slot < self.event_months + 12:
            raise ConfigError("too many or too long events for the window")
        vals = [self.trend_per_century, self.cycle_amplitude, self.noise_sigma, self.amplitude,
                self.negative_growth, self.positive_growth]
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError("amplitudes must be finite")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synth config: {exc}") from exc

    @classmethod
    def from_json(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", path) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config JSON: {exc}", path) from exc
        return cls.from_dict(doc)


def _as(cls, value):
    if isinstance(value, cls):
        return value
    if isinstance(value, dict):
        try:
            return cls(**value)
        except TypeError as exc:
            raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc
    raise ConfigError(f"expected mapping for {cls.__name__}")


def reference_config(**overrides):
    """8x8 grid, 100 years, SM-coupled extremes at lag 1, half the extreme
    cells with hot & dry & fire co-occurrence and a -30 GgC/month/degC
    sensitivity in the first region."""
    doc = {"compound_fraction": 0.5, "sensitivity": {2: -30.0}}
    doc.update(overrides)
    return SynthConfig.from_dict(doc)


def intensity_trend_config(**overrides):
    """Negative extremes whose magnitude grows linearly through the record."""
    doc = {"negative_growth": 8e6, "extreme_cell_fraction": 0.5}
    doc.update(overrides)
    return SynthConfig.from_dict(doc)


@dataclass
class GroundTruth:
    events: list
    dominant: dict
    labels: dict
    sensitivity: dict
    region_injected: dict
    total_injected: float
    neg_intensity_slope: float
    pos_intensity_slope: float
    compound_fraction: float
    lats: list
    lons: list

    def to_dict(self):
        return {
            "events": self.events,
            "dominant": {str(k): v for k, v in sorted(self.dominant.items())},
            "labels": {str(k): sorted(v) for k, v in sorted(self.labels.items())},
            "sensitivity": {str(k): v for k, v in sorted(self.sensitivity.items())},
            "region_injected": {str(k): v for k, v in sorted(self.region_injected.items())},
            "total_injected": self.total_injected,
            "neg_intensity_slope": self.neg_intensity_slope,
            "pos_intensity_slope": self.pos_intensity_slope,
            "compound_fraction": self.compound_fraction,
            "lats": self.lats,
            "lons": self.lons,
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(
                events=doc["events"],
                dominant={int(k): v for k, v in doc["dominant"].items()},
                labels={int(k): frozenset(v) for k, v in doc["labels"].items()},
                sensitivity={int(k): float(v) for k, v in doc["sensitivity"].items()},
                region_injected={int(k): v for k, v in doc["region_injected"].items()},
                total_injected=float(doc["total_injected"]),
                neg_intensity_slope=float(doc["neg_intensity_slope"]),
                pos_intensity_slope=float(doc["pos_intensity_slope"]),
                compound_fraction=float(doc["compound_fraction"]),
                lats=[float(x) for x in doc["lats"]],
                lons=[float(x) for x in doc["lons"]],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed ground truth: {exc}") from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except OSError as exc:
            raise DataError(f"cannot read ground truth: {exc.strerror}", path) from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed ground truth JSON: {exc}", path) from exc


@dataclass
class SynthOutput:
    stacks: dict
    regions: RegionMask
    truth: GroundTruth
    injections: np.ndarray
    # AR(1) noise plus injections, (time, cell) over all cells; the anomaly
    # the decomposition would ideally recover
    anomaly: np.ndarray


def _ar1(rng, n, sigma, phi):
    """Stationary AR(1) series with marginal standard deviation ``sigma``."""
    eps = rng.standard_normal(n) * sigma * math.sqrt(1.0 - phi * phi)
    eps[0] = rng.standard_normal() * sigma
    return lfilter([1.0], [1.0, -phi], eps)


def quadrant_regions(n_lat, n_lon, ids):
    out = np.empty((n_lat, n_lon), dtype=np.int64)
    hl, hn = (n_lat + 1) // 2, (n_lon + 1) // 2
    out[:hl, :hn], out[:hl, hn:], out[hl:, :hn], out[hl:, hn:] = ids
    return out


def _season_weight(month_index):
    """1 for DJF, 0 for JJA, 0.5 otherwise (month_index 0 = January)."""
    m = month_index % 12
    return np.where(np.isin(m, (11, 0, 1)), 1.0, np.where(np.isin(m, (5, 6, 7)), 0.0, 0.5))


def _place_events(rng, cfg, n_time, cell):
    """Random non-overlapping event starts per window: list of (start, sign)."""
    win = 12 * cfg.window_years
    n_slots = 2 * cfg.events_per_sign
    if n_slots == 0:
        return []
    slot = win // n_slots
    margin = 6
    out = []
    for w0 in range(0, n_time - win + 1, win):
        signs = rng.permutation([-1] * cfg.events_per_sign + [1] * cfg.events_per_sign)
        for k, sign in enumerate(signs):
            span = slot - cfg.event_months - 2 * margin
            start = w0 + k * slot + margin + int(rng.integers(0, span + 1))
            out.append((start, int(sign)))
    return out


def generate(cfg):
    """Build NBP and driver stacks, a region mask and the matching ground truth."""
    cfg.validate()
    n_time = 12 * cfg.years
    n_cells = cfg.n_lat * cfg.n_lon
    t = np.arange(n_time, dtype=np.float64)
    month_idx = np.arange(n_time) % 12
    cent = t / 1200.0
    lats = cfg.lat_start + cfg.dlat * np.arange(cfg.n_lat)
    lons = cfg.lon_start + cfg.dlon * np.arange(cfg.n_lon)

    ocean = np.zeros(n_cells, dtype=bool)
    ocean[[int(c) for c in cfg.ocean_cells]] = True
    land_cells = np.flatnonzero(~ocean)

    region_grid = quadrant_regions(cfg.n_lat, cfg.n_lon, cfg.region_ids)
    region_grid.ravel()[ocean] = 0
    regions = RegionMask(region_grid, dict(SREX_TABLE))
    cell_region = region_grid.ravel()

    sel = substream(cfg.seed, _STREAM_SELECT)
    n_extreme = int(round(cfg.extreme_cell_fraction * land_cells.size))
    extreme_cells = np.sort(sel.permutation(land_cells)[:n_extreme])
    n_compound = int(round(cfg.compound_fraction * n_extreme))
    compound_cells = set(np.sort(sel.permutation(extreme_cells)[:n_compound]).tolist())
    extreme_set = set(extreme_cells.tolist())

    nbp = np.zeros((n_time, n_cells))
    inj = np.zeros((n_time, n_cells))
    anomaly = np.zeros((n_time, n_cells))
    drivers = {name: np.zeros((n_time, n_cells)) for name in DRIVERS}
    tas_background = np.zeros((n_time, n_cells))
    events = []

    # regional TAS anomaly shared by all cells of a region
    tas_common = {}
    for rid in sorted(set(cfg.region_ids)):
        rng = substream(cfg.seed, _STREAM_REGION + rid)
        tas_common[rid] = _ar1(rng, n_time, cfg.tas.regional_sigma, cfg.tas.regional_phi)
    areas = grid_areas(GridStack("a", "m2", (cfg.start_year, 1), lats, lons,
                                 np.zeros((1, cfg.n_lat, cfg.n_lon)))).ravel()

    summer_rate = cfg.tas.warming_per_century / 100.0 / 12.0
    season_w = _season_weight(month_idx)
    warming_rate = summer_rate * (1.0 + (cfg.tas.winter_warming_ratio - 1.0) * season_w)

    for c in range(n_cells):
        if ocean[c]:
            continue
        rng = substream(cfg.seed, c)
        i, j = divmod(c, cfg.n_lon)
        rid = int(cell_region[c])

        # injections
        if c in extreme_set:
            bias = cfg.region_negative_bias.get(rid, 1.0)
            for start, sign in _place_events(rng, cfg, n_time, c):
                months = np.arange(start, start + cfg.event_months)
                if sign < 0:
                    amp = -(cfg.amplitude * bias + cfg.negative_growth * months)
                else:
                    amp = cfg.amplitude + cfg.positive_growth * months
                inj[months, c] += amp
                events.append({"cell": c, "lat": float(lats[i]), "lon": float(lons[j]),
                               "start": int(start), "end": int(months[-1]), "sign": sign,
                               "amplitude": float(amp[0]),
                               "mass": reduce_sum_deterministic(amp)})
        for ev in cfg.injections:
            if c in [int(x) for x in ev["cells"]]:
                months = np.arange(int(ev["start"]), int(ev["start"]) + int(ev["months"]))
                amp = np.full(months.size, float(ev["sign"]) * abs(float(ev["amplitude"])))
                inj[months, c] += amp
                events.append({"cell": c, "lat": float(lats[i]), "lon": float(lons[j]),
                               "start": int(months[0]), "end": int(months[-1]),
                               "sign": int(np.sign(ev["sign"])), "amplitude": float(amp[0]),
                               "mass": reduce_sum_deterministic(amp)})

        signal = inj[:, c] / cfg.amplitude if cfg.amplitude else np.zeros(n_time)

        # drivers
        phase = rng.uniform(0, 2 * np.pi)
        for name, spec in cfg.drivers.items():
            series = (spec.base + spec.trend_per_century * cent
                      + spec.cycle_amplitude * np.cos(2 * np.pi * t / 12 + phase)
                      + _ar1(rng, n_time, spec.noise_sigma, spec.noise_phi))
            drivers[name][:, c] = series
        tas = (cfg.tas.base - 0.4 * abs(lats[i])
               + cfg.tas.seasonal_amplitude * -np.cos(2 * np.pi * t / 12)
               + warming_rate * t + tas_common[rid]
               + rng.standard_normal(n_time) * cfg.tas.cell_sigma)
        drivers["TAS"][:, c] = tas
        tas_background[:, c] = tas

        couplings = dict(cfg.couplings) if c in extreme_set else {}
        if c in compound_cells:
            couplings.update(cfg.compound_couplings)
        for name, cp in couplings.items():
            shifted = np.zeros(n_time)
            shifted[:n_time - cp.lag] = signal[cp.lag:]
            drivers[name][:, c] += cp.gain * shifted + rng.standard_normal(n_time) * cp.noise

        # NBP
        anomaly[:, c] = _ar1(rng, n_time, cfg.noise_sigma, cfg.noise_phi) + inj[:, c]
        growth = 1.0 + cfg.cycle_growth_per_century * cent
        nbp[:, c] = (cfg.trend_per_century * cent + cfg.trend_quadratic * cent ** 2
                     + cfg.cycle_amplitude * growth * np.sin(2 * np.pi * t / 12 + phase)
                     + anomaly[:, c])

    # programmed regional sensitivity to background temperature, distributed
    # by area so the regional sum responds to the area-weighted regional mean
    for rid, b1 in sorted(cfg.sensitivity.items()):
        cols = np.flatnonzero(cell_region == rid)
        if cols.size == 0:
            raise ConfigError(f"sensitivity region {rid} has no cells")
        w = areas[cols] / reduce_sum_deterministic(areas[cols])
        for c, wc in zip(cols, w):
            nbp[:, c] += b1 * 1e9 * wc * tas_background[:, c]

    nbp[:, ocean] = -9999.0
    for arr in drivers.values():
        arr[:, ocean] = -9999.0
    shape = (n_time, cfg.n_lat, cfg.n_lon)
    t0 = (cfg.start_year, 1)
    stacks = {"nbp": GridStack("nbp", MASS_UNITS, t0, lats, lons, nbp.reshape(shape))}
    for name in DRIVERS:
        stacks[name.lower()] = GridStack(name.lower(), DRIVER_UNITS[name], t0, lats, lons,
                                         drivers[name].reshape(shape))

    dominant, labels = {}, {}
    for c in extreme_cells.tolist():
        cps = dict(cfg.couplings)
        if c in compound_cells:
            cps.update(cfg.compound_couplings)
        if cps:
            best = max(cps.items(), key=lambda kv: abs(kv[1].gain) / max(kv[1].noise, 1e-300))
            dominant[c] = {"driver": best[0], "lag": best[1].lag}
        labels[c] = _expected_label(cps)

    neg_series = rowwise_sum(np.where(inj < 0, inj, 0.0))
    pos_series = rowwise_sum(np.where(inj > 0, inj, 0.0))
    region_injected = {}
    win = 12 * cfg.window_years
    for rid in sorted(set(cfg.region_ids)):
        cols = np.flatnonzero(cell_region == rid)
        region_injected[rid] = [reduce_sum_deterministic(inj[k:k + win, cols])
                                for k in range(0, n_time - win + 1, win)]
    truth = GroundTruth(
        events=sorted(events, key=lambda e: (e["cell"], e["start"])),
        dominant=dominant, labels=labels, sensitivity=dict(cfg.sensitivity),
        region_injected=region_injected,
        total_injected=reduce_sum_deterministic(inj),
        neg_intensity_slope=linear_trend(neg_series),
        pos_intensity_slope=linear_trend(pos_series),
        compound_fraction=(len(compound_cells) / n_extreme) if n_extreme else 0.0,
        lats=[float(x) for x in lats], lons=[float(x) for x in lons],
    )
    return SynthOutput(stacks, regions, truth, inj, anomaly)


def _expected_label(couplings):
    label = set()
    moist = couplings.get("SM", couplings.get("Prcp"))
    if moist is not None:
        label.add("dry" if moist.gain > 0 else "wet")
    if "TAS" in couplings:
        label.add("hot" if couplings["TAS"].gain < 0 else "cold")
    if "Fire" in couplings:
        label.add("fire")
    return frozenset(label)


# Sensitivity decades with fewer defined months are not scored.
MIN_SCORED_MONTHS = 100


@dataclass
class Recovered:
    """What a pipeline run recovered, in ground-truth terms.

    Cells are flat grid indices and months are absolute record months.
    ``events`` holds ``(cell, sign, start, end)`` tuples; ``dominants`` maps
    ``(window, cell, lag)`` to a driver name; ``exclusive`` maps a
    combination name to its pooled exclusive fraction; ``sensitivities``
    holds ``(region_id, n_months, b1)`` tuples.
    """

    lats: list
    lons: list
    n_windows: int = 0
    events: list = field(default_factory=list)
    dominants: dict = field(default_factory=dict)
    exclusive: dict = field(default_factory=dict)
    sensitivities: list = field(default_factory=list)


def _overlaps(a, b):
    return a[0] == b[0] and a[1] == b[1] and a[2] <= b[3] and b[2] <= a[3]


def scorecard(truth, rec):
    """Recovery metrics of ``rec`` against ``truth``.

    TCE recall is the share of injected events overlapped by a detected
    event of the same sign at the same cell; precision is the share of
    detected events overlapping an injected one (1.0 when nothing was
    detected). Driver accuracy counts (window, cell) pairs whose dominant
    driver at the programmed lag matches. The compound error is the largest
    gap between recovered and programmed exclusive fractions over all
    combinations; the sensitivity error is the largest relative slope error
    over scored decades. Metrics with nothing to score are None.
    """
    if (not np.array_equal(np.asarray(truth.lats, dtype=float), np.asarray(rec.lats, dtype=float))
            or not np.array_equal(np.asarray(truth.lons, dtype=float),
                                  np.asarray(rec.lons, dtype=float))):
        raise DataError("recovered outputs are on a different grid from the ground truth")
    injected = [(int(e["cell"]), int(e["sign"]), int(e["start"]), int(e["end"]))
                for e in truth.events]
    detected = [tuple(int(v) for v in e) for e in rec.events]
    by_cell = {}
    for d in detected:
        by_cell.setdefault(d[0], []).append(d)
    hit = sum(1 for e in injected if any(_overlaps(e, d) for d in by_cell.get(e[0], ())))
    recall = hit / len(injected) if injected else None
    inj_by_cell = {}
    for e in injected:
        inj_by_cell.setdefault(e[0], []).append(e)
    true_pos = sum(1 for d in detected if any(_overlaps(d, e) for e in inj_by_cell.get(d[0], ())))
    precision = true_pos / len(detected) if detected else 1.0

    trials = correct = 0
    for cell, dom in sorted(truth.dominant.items()):
        for w in range(rec.n_windows):
            trials += 1
            correct += rec.dominants.get((w, cell, int(dom["lag"]))) == dom["driver"]
    accuracy = correct / trials if trials else None

    expected = {}
    for lab in truth.labels.values():
        name = combo_name(lab)
        expected[name] = expected.get(name, 0.0) + 1.0 / len(truth.labels)
    compound_error = None
    if expected:
        names = sorted(set(expected) | {k for k, v in rec.exclusive.items() if v})
        compound_error = max(abs(rec.exclusive.get(k, 0.0) - expected.get(k, 0.0))
                             for k in names)

    errors = []
    for rid, b1 in sorted(truth.sensitivity.items()):
        for r, n, got in rec.sensitivities:
            if r == rid and n >= MIN_SCORED_MONTHS:
                errors.append(abs(got - b1) / abs(b1) if b1 else abs(got))
    return {
        "tce_recall": recall,
        "tce_precision": precision,
        "n_injected_events": len(injected),
        "n_detected_events": len(detected),
        "dominant_driver_accuracy": accuracy,
        "compound_fraction_error": compound_error,
        "sensitivity_slope_error": max(errors) if errors else None,
        "n_sensitivity_decades": len(errors),
    }
