"""Run configuration and end-to-end analysis wiring used by the CLI."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import svg
from .attribution import (DRIVERS, MAX_LAG, P_MAX, TAU, attribute_catalog,
                          combo_name, compound_fractions, compound_labels, dominance_summary,
                          dominant_driver, qualifies)
from .errors import ConfigError, DataError
from .extremes import NEGATIVE, POSITIVE, extreme_catalog, tce_catalog, tile_windows, window_slices
from .gridstore import (FLUX_UNITS, MASS_UNITS, SREX_TABLE, RegionMask, flux_to_mass,
                        grid_areas, load_gridstack, load_region_mask, load_region_table,
                        region_mask_from_rectangles, save_gridstack)
from .regional import (G_PER_PG, cell_regions, dominance_counts, region_series, sensitivity,
                       temperature_quantiles, uptake_release_split, window_net_extremes)
from .ssa import DEFAULT_WINDOW, ssa_split_many
from .stats import ols, reduce_sum_deterministic
from .synth import GroundTruth, Recovered, scorecard

INPUT_KEYS = ("nbp", "prcp", "sm", "tas", "fire")
DRIVER_KEYS = {"Prcp": "prcp", "SM": "sm", "TAS": "tas", "Fire": "fire"}


@dataclass
class RunConfig:
    inputs: dict
    start_year: int = 1850
    window_years: int = 25
    window_count: int = 10
    ssa_window: int = DEFAULT_WINDOW
    lags: list = field(default_factory=lambda: list(range(MAX_LAG + 1)))
    summary_lag: int = 1
    tau: float = TAU
    p_max: float = P_MAX
    output_dir: str = "out"
    ground_truth: str | None = None

    def __post_init__(self):
        if "nbp" not in self.inputs:
            raise ConfigError("inputs must name an nbp file")
        if any(not 0 <= int(l) <= MAX_LAG for l in self.lags):
            raise ConfigError(f"lags must lie in 0..{MAX_LAG}")
        self.lags = sorted({int(l) for l in self.lags})
        if self.summary_lag not in self.lags:
            raise ConfigError("summary_lag must be one of the configured lags")
        if self.ssa_window < 2:
            raise ConfigError("ssa_window must be at least 2")
        if not 0 < self.p_max <= 1 or not 0 <= self.tau < 1:
            raise ConfigError("p_max must lie in (0, 1] and tau in [0, 1)")

    @property
    def windows(self):
        return tile_windows(self.start_year, self.window_years, self.window_count)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc, base=None):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        doc = dict(doc)
        if base is not None:
            doc["inputs"] = {k: _resolve(base, v) for k, v in doc.get("inputs", {}).items()}
            if doc.get("ground_truth"):
                doc["ground_truth"] = _resolve(base, doc["ground_truth"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", path) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config JSON: {exc}", path) from exc
        return cls.from_dict(doc, base=path.parent)


def _resolve(base, value):
    if isinstance(value, str):
        p = Path(value)
        return str(p if p.is_absolute() else Path(base) / p)
    return value


class Analysis:
    """Lazily computed pipeline stages over one set of inputs."""

    def __init__(self, config, threads=1):
        self.config = config
        self.threads = max(1, int(threads))

    # inputs -----------------------------------------------------------------

    @cached_property
    def stacks(self):
        out = {}
        for key in INPUT_KEYS:
            if key in self.config.inputs:
                out[key] = load_gridstack(self.config.inputs[key])
        nbp = out["nbp"]
        if nbp.units in FLUX_UNITS:
            out["nbp"] = flux_to_mass(nbp, grid_areas(nbp))
        elif nbp.units != MASS_UNITS:
            raise DataError(f"nbp units {nbp.units!r} not recognised", self.config.inputs["nbp"])
        for key, st in out.items():
            if (st.t0 != nbp.t0 or st.n_time != nbp.n_time or st.shape != nbp.shape
                    or not np.array_equal(st.land, nbp.land)):
                raise DataError(f"{key} grid, time axis or land mask differs from nbp",
                                self.config.inputs[key])
        return out

    @property
    def nbp(self):
        return self.stacks["nbp"]

    @cached_property
    def region_mask(self):
        src = self.config.inputs.get("regions")
        table_path = self.config.inputs.get("region_table")
        if src is None:
            return RegionMask(np.zeros(self.nbp.shape, dtype=np.int64), dict(SREX_TABLE))
        if isinstance(src, list):
            table = SREX_TABLE if table_path is None else load_region_table(table_path)
            return region_mask_from_rectangles(src, self.nbp.lats, self.nbp.lons, table)
        return load_region_mask(src, table_path)

    @cached_property
    def regions(self):
        return cell_regions(self.nbp, self.region_mask)

    @cached_property
    def areas(self):
        return grid_areas(self.nbp).ravel()[self.nbp.land_cells()]

    @cached_property
    def windows(self):
        ws = self.config.windows
        slices = window_slices(ws, self.nbp.t0, self.nbp.n_time)
        if slices[0].start != 0 or slices[-1].stop != self.nbp.n_time:
            raise ConfigError(f"windows {ws[0].label}..{ws[-1].label} do not tile the "
                              f"{self.nbp.n_time}-month record exactly")
        return ws

    @property
    def driver_names(self):
        return [d for d in DRIVERS if DRIVER_KEYS[d] in self.stacks]

    # decomposition ----------------------------------------------------------

    @cached_property
    def decompositions(self):
        out = {}
        for key, st in self.stacks.items():
            out[key] = ssa_split_many(st.land_matrix(), self.config.ssa_window, self.threads)
        return out

    @cached_property
    def anomalies(self):
        return {k: v[2] for k, v in self.decompositions.items()}

    # extremes ---------------------------------------------------------------

    @cached_property
    def catalog(self):
        return extreme_catalog(self.anomalies["nbp"], self.windows, self.nbp.t0)

    @cached_property
    def tces(self):
        return tce_catalog(self.anomalies["nbp"], self.catalog)

    @cached_property
    def intensity(self):
        pos = np.concatenate([we.pos_intensity for we in self.catalog])
        neg = np.concatenate([we.neg_intensity for we in self.catalog])
        return pos, neg

    @cached_property
    def intensity_trends(self):
        pos, neg = self.intensity
        t = np.arange(pos.size, dtype=np.float64)
        return {"positive": ols(t, pos), "negative": ols(t, neg)}

    # attribution ------------------------------------------------------------

    @cached_property
    def records(self):
        drivers = {d: self.anomalies[DRIVER_KEYS[d]] for d in self.driver_names}
        return attribute_catalog(self.anomalies["nbp"], drivers, self.tces, self.catalog,
                                 self.config.lags)

    @cached_property
    def records_by_key(self):
        out = defaultdict(list)
        for r in self.records:
            out[(r.window, r.cell, r.lag)].append(r)
        return out

    @cached_property
    def qualifying_cells(self):
        """Per window: sorted cells with at least two TCEs of each sign."""
        out = []
        for events in self.tces:
            per_cell = defaultdict(list)
            for e in events:
                per_cell[e.cell].append(e)
            out.append(sorted(c for c, evs in per_cell.items() if qualifies(evs)))
        return out

    @cached_property
    def tce_counts(self):
        out = []
        for events in self.tces:
            counts = defaultdict(int)
            for e in events:
                counts[e.cell] += 1
            out.append(dict(counts))
        return out

    def dominants(self, window, lag):
        """{cell: (driver, rho, p)} for cells with a significant dominant driver."""
        out = {}
        for cell in self.qualifying_cells[window]:
            recs = self.records_by_key.get((window, cell, lag), [])
            name = dominant_driver(recs, self.config.p_max)
            if name is not None:
                r = next(r for r in recs if r.driver == name)
                out[cell] = (name, r.rho, r.p)
        return out

    def labels(self, window, lag):
        return {cell: compound_labels(self.records_by_key.get((window, cell, lag), []),
                                      self.config.tau, self.config.p_max)
                for cell in self.qualifying_cells[window]}

    def compound(self, window, lag):
        return compound_fractions(self.labels(window, lag), self.tce_counts[window])

    def compound_pooled(self, lag):
        labels, counts = {}, {}
        for w in range(len(self.windows)):
            for cell, lab in self.labels(w, lag).items():
                labels[(w, cell)] = lab
                counts[(w, cell)] = self.tce_counts[w].get(cell, 0)
        return compound_fractions(labels, counts)

    # regions ----------------------------------------------------------------

    @cached_property
    def region_ids(self):
        return [int(r) for r in np.unique(self.regions) if r != 0]

    @cached_property
    def region_summaries(self):
        return [window_net_extremes(self.anomalies["nbp"], we, events, self.regions, w)
                for w, (we, events) in enumerate(zip(self.catalog, self.tces))]

    @cached_property
    def region_nbp(self):
        m = self.nbp.land_matrix()
        return {r: region_series(m, self.regions, r, "sum") for r in self.region_ids}

    @cached_property
    def region_tas(self):
        if "tas" not in self.stacks:
            return {}
        m = self.stacks["tas"].land_matrix()
        return {r: region_series(m, self.regions, r, "area_weighted_mean", self.areas)
                for r in self.region_ids}

    @cached_property
    def sensitivities(self):
        out = []
        for r in self.region_ids:
            if r in self.region_tas:
                out.extend(sensitivity(self.region_nbp[r], self.region_tas[r], self.nbp.t0, r))
        return out

    @cached_property
    def tas_quantiles(self):
        return {r: temperature_quantiles(self.region_tas[r], self.windows, self.nbp.t0)
                for r in self.region_ids if r in self.region_tas}

    def uptake_release(self):
        rows = []
        a = self.anomalies["nbp"]
        for w, we in enumerate(self.catalog):
            n = we.pos_mask.shape[0]
            block = a[we.start:we.start + n]
            for r in self.region_ids:
                cols = np.flatnonzero(self.regions == r)
                up = uptake_release_split(self.region_nbp[r][we.start:we.start + n])
                sums = []
                for months in (up, ~up):
                    sub = block[months][:, cols]
                    sums.append(reduce_sum_deterministic(sub[we.pos_mask[months][:, cols]]))
                    sums.append(reduce_sum_deterministic(sub[we.neg_mask[months][:, cols]]))
                rows.append([r, self.region_mask.abbr(r), self.windows[w].label,
                             int(up.sum()), int((~up).sum())] + [s / G_PER_PG for s in sums])
        return rows


def recovered(an):
    """Pipeline results expressed in ground-truth terms for scoring."""
    flat = an.nbp.land_cells()
    events = []
    for we, window_events in zip(an.catalog, an.tces):
        for e in window_events:
            events.append((int(flat[e.cell]), e.sign, e.start + we.start, e.end + we.start))
    dominants = {}
    for w in range(len(an.windows)):
        for lag in an.config.lags:
            for cell, (name, _, _) in an.dominants(w, lag).items():
                dominants[(w, int(flat[cell]), lag)] = name
    exclusive = {combo_name(c): exc for c, _, exc in an.compound_pooled(an.config.summary_lag)}
    sens = [(s.region_id, s.n, s.b1) for s in an.sensitivities]
    return Recovered([float(x) for x in an.nbp.lats], [float(x) for x in an.nbp.lons],
                     len(an.windows), events, dominants, exclusive, sens)


# writers ----------------------------------------------------------------------

def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "nan"
    return v


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _cell_coords(an):
    flat = an.nbp.land_cells()
    n_lon = an.nbp.shape[1]
    return [(float(an.nbp.lats[f // n_lon]), float(an.nbp.lons[f % n_lon])) for f in flat]


def stage_decompose(an, out, plots=False):
    for key, (trend, mac, anomaly) in an.decompositions.items():
        st = an.stacks[key]
        save_gridstack(st.with_land_matrix(trend, f"{key}_trend"), out / f"{key}_trend.gstack")
        save_gridstack(st.with_land_matrix(mac, f"{key}_mac"), out / f"{key}_mac.gstack")
        save_gridstack(st.with_land_matrix(anomaly, f"{key}_anomaly"),
                       out / f"{key}_anomaly.gstack")
    if plots:
        trend, mac, anomaly = an.decompositions["nbp"]
        svg.line_chart({"trend": list(trend.sum(axis=1)), "mac": list(mac.sum(axis=1)),
                        "anomaly": list(anomaly.sum(axis=1))}, out / "decompose_nbp.svg",
                       "NBP decomposition (sum over cells)", "month", "gC/month")


def stage_extremes(an, out, plots=False):
    rows = []
    for we in an.catalog:
        rows.append([we.window.label, we.window.start_year, we.window.end_year, we.q,
                     we.n_samples, we.n_flagged, we.flagged_fraction])
    write_csv(out / "extremes.csv", ["window", "start_year", "end_year", "q_gC_per_month",
                                     "n_samples", "n_flagged", "flagged_fraction"], rows)
    rows = []
    for we in an.catalog:
        for k in range(we.pos_intensity.size):
            y, m = an.nbp.month_of(we.start + k)
            rows.append([y, m, we.window.label, float(we.pos_intensity[k]),
                         float(we.neg_intensity[k])])
    write_csv(out / "intensity.csv", ["year", "month", "window", "pos_intensity_gC_per_month",
                                      "neg_intensity_gC_per_month"], rows)
    rows = [[sign, fit.b1, fit.b1_se] for sign, fit in an.intensity_trends.items()]
    write_csv(out / "intensity_trends.csv",
              ["sign", "slope_gC_per_month_per_month", "slope_stderr"], rows)
    if plots:
        pos, neg = an.intensity
        svg.line_chart({"positive": list(pos / 1e9), "negative": list(neg / 1e9)},
                       out / "intensity.svg", "Intensity of NBP extremes", "month", "GgC/month")
        svg.line_chart({"q": [we.q / 1e9 for we in an.catalog]}, out / "threshold.svg",
                       "Threshold q per window", "window", "GgC/month")


def stage_tce(an, out, plots=False):
    coords = _cell_coords(an)
    rows = []
    for events in an.tces:
        for e in events:
            lat, lon = coords[e.cell]
            rows.append([lat, lon, an.windows[e.window].label, e.sign_name, e.start, e.end,
                         e.n_extreme_months, e.integrated_anomaly])
    write_csv(out / "tce.csv", ["cell_lat", "cell_lon", "window", "sign", "start", "end",
                                "n_extreme_months", "integrated_gC"], rows)
    if plots:
        groups = {}
        for w, events in enumerate(an.tces):
            groups[an.windows[w].label] = {
                "negative": sum(1 for e in events if e.sign == NEGATIVE),
                "positive": sum(1 for e in events if e.sign == POSITIVE)}
        svg.bar_chart(groups, out / "tce_counts.svg", "TCE counts", "window", "events")


def stage_attribute(an, out, plots=False):
    coords = _cell_coords(an)
    rows = []
    for r in an.records:
        lat, lon = coords[r.cell]
        rows.append([lat, lon, an.windows[r.window].label, r.driver, r.lag, r.rho, r.p, r.n])
    write_csv(out / "attribution.csv",
              ["lat", "lon", "window", "driver", "lag", "rho", "p", "n"], rows)
    dom_rows, sum_rows = [], []
    groups = {}
    for w, win in enumerate(an.windows):
        for lag in an.config.lags:
            doms = an.dominants(w, lag)
            for cell, (name, rho, p) in sorted(doms.items()):
                lat, lon = coords[cell]
                dom_rows.append([lat, lon, win.label, lag, name, rho, p])
            summary = dominance_summary((name, rho) for name, rho, _ in doms.values())
            for name, (pct, sign) in summary.items():
                n = sum(1 for v in doms.values() if v[0] == name)
                sum_rows.append([win.label, lag, name, pct, sign, n])
            if lag == an.config.summary_lag:
                groups[win.label] = {name: pct for name, (pct, _) in summary.items()}
    write_csv(out / "dominant.csv", ["lat", "lon", "window", "lag", "driver", "rho", "p"],
              dom_rows)
    write_csv(out / "dominance.csv", ["window", "lag", "driver", "percent", "sign", "n_cells"],
              sum_rows)
    if plots:
        svg.bar_chart(groups, out / "dominance.svg",
                      f"Dominant drivers at lag {an.config.summary_lag}", "window", "% of cells")


def stage_compound(an, out, plots=False):
    lag = an.config.summary_lag
    coords = _cell_coords(an)
    rows, label_rows = [], []
    for w, win in enumerate(an.windows):
        n_tces = sum(an.tce_counts[w].get(c, 0) for c in an.qualifying_cells[w])
        for combo, inc, exc in an.compound(w, lag):
            rows.append([win.label, lag, combo_name(combo), inc, exc, n_tces])
        for cell, lab in sorted(an.labels(w, lag).items()):
            lat, lon = coords[cell]
            label_rows.append([lat, lon, win.label, lag, combo_name(lab),
                               an.tce_counts[w].get(cell, 0)])
    pooled = an.compound_pooled(lag)
    n_all = sum(sum(an.tce_counts[w].get(c, 0) for c in an.qualifying_cells[w])
                for w in range(len(an.windows)))
    for combo, inc, exc in pooled:
        rows.append(["all", lag, combo_name(combo), inc, exc, n_all])
    write_csv(out / "compound.csv",
              ["window", "lag", "combination", "inclusive", "exclusive", "n_tces"], rows)
    write_csv(out / "compound_labels.csv",
              ["lat", "lon", "window", "lag", "label", "n_tces"], label_rows)
    if plots:
        groups = {combo_name(c): {"inclusive": inc, "exclusive": exc}
                  for c, inc, exc in pooled if c}
        svg.bar_chart(groups, out / "compound.svg", f"Compound drivers at lag {lag}",
                      "combination", "fraction of TCEs")


def stage_regions(an, out, plots=False):
    rows, dom_rows = [], []
    for w, summaries in enumerate(an.region_summaries):
        label = an.windows[w].label
        for s in summaries:
            rows.append([s.region_id, an.region_mask.abbr(s.region_id), label, s.net_extreme,
                         s.pos_total, s.neg_total, s.n_neg_tce, s.n_pos_tce, s.neg_tce_total,
                         s.dominance])
        c = dominance_counts(summaries)
        dom_rows.append([label, c["n_regions"], c["n_pos"], c["n_neg"], c["n_zero"],
                         c["pct_pos"], c["pct_neg"]])
    write_csv(out / "regions.csv",
              ["region_id", "abbr", "window", "net_extreme_PgC", "pos_total_PgC",
               "neg_total_PgC", "n_neg_tce", "n_pos_tce", "neg_tce_total_PgC", "dominance"], rows)
    write_csv(out / "region_dominance.csv",
              ["window", "n_regions", "n_pos", "n_neg", "n_zero", "pct_pos", "pct_neg"], dom_rows)
    write_csv(out / "uptake_release.csv",
              ["region_id", "abbr", "window", "n_uptake_months", "n_release_months",
               "pos_extreme_uptake_PgC", "neg_extreme_uptake_PgC", "pos_extreme_release_PgC",
               "neg_extreme_release_PgC"], an.uptake_release())
    if plots:
        groups = {an.windows[w].label: {an.region_mask.abbr(s.region_id): s.net_extreme
                                        for s in summaries}
                  for w, summaries in enumerate(an.region_summaries)}
        svg.bar_chart(groups, out / "regions.svg", "Net extreme impact by region", "window",
                      "PgC")


def stage_sensitivity(an, out, plots=False):
    rows = [[s.region_id, an.region_mask.abbr(s.region_id), s.start_year, s.end_year, s.n,
             s.b0, s.b1, s.r2] for s in an.sensitivities]
    write_csv(out / "sensitivity.csv",
              ["region_id", "abbr", "start_year", "end_year", "n", "b0_GgC_per_month",
               "b1_GgC_per_month_per_degC", "r2"], rows)
    q_rows, r_rows = [], []
    for r, (values, rates) in an.tas_quantiles.items():
        abbr = an.region_mask.abbr(r)
        for w, vals in enumerate(values):
            q_rows.append([r, abbr, an.windows[w].label] + list(vals))
        for q, rate in zip((0.1, 0.5, 0.9), rates):
            r_rows.append([r, abbr, q, rate])
    write_csv(out / "tas_quantiles.csv",
              ["region_id", "abbr", "window", "q10_degC", "q50_degC", "q90_degC"], q_rows)
    write_csv(out / "tas_quantile_rates.csv",
              ["region_id", "abbr", "quantile", "rate_degC_per_decade"], r_rows)
    if plots:
        series = defaultdict(list)
        for s in an.sensitivities:
            series[an.region_mask.abbr(s.region_id)].append(s.b1)
        svg.line_chart(dict(series), out / "sensitivity.svg", "NBP sensitivity to TAS",
                       "decade", "GgC/month/degC")


def stage_scorecard(an, out, plots=False):
    if not an.config.ground_truth:
        raise ConfigError("scorecard needs ground_truth in the run config")
    truth = GroundTruth.load(an.config.ground_truth)
    card = scorecard(truth, recovered(an))
    write_json(out / "scorecard.json", card)
    if plots:
        svg.bar_chart({k: {"value": v} for k, v in card.items()
                       if isinstance(v, float) and k != "n_detected_events"},
                      out / "scorecard.svg", "Recovery scorecard", "metric", "value")
    return card


STAGES = {
    "decompose": stage_decompose,
    "extremes": stage_extremes,
    "tce": stage_tce,
    "attribute": stage_attribute,
    "compound": stage_compound,
    "regions": stage_regions,
    "sensitivity": stage_sensitivity,
    "scorecard": stage_scorecard,
}
PIPELINE_ORDER = ("extremes", "tce", "attribute", "compound", "regions", "sensitivity")


def run_stage(name, config, out, threads=1, plots=False, analysis=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    an = analysis or Analysis(config, threads)
    STAGES[name](an, out, plots)
    return an


def run_pipeline(config, out, threads=1, plots=False, decompose=False):
    """All analysis stages; anomaly grids are written only when ``decompose`` is set."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    an = Analysis(config, threads)
    if decompose:
        stage_decompose(an, out, plots)
    for name in PIPELINE_ORDER:
        STAGES[name](an, out, plots)
    return an
