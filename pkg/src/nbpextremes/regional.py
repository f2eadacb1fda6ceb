"""Region aggregation, extreme budgets, uptake/release split and temperature diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .extremes import NEGATIVE, POSITIVE, window_slices
from .stats import (moving_average, ols, quantile_nearest_rank,
                    reduce_sum_deterministic, rowwise_sum)

G_PER_PG = 1e15
G_PER_GG = 1e9
MA_WINDOW = 120
DECADE_YEARS = 10
MIN_DEFINED_MONTHS = 24
TAS_QUANTILES = (0.10, 0.50, 0.90)


@dataclass(frozen=True)
class RegionWindowSummary:
    region_id: int
    window: int
    net_extreme: float
    pos_total: float
    neg_total: float
    n_neg_tce: int
    n_pos_tce: int
    neg_tce_total: float

    @property
    def dominance(self):
        return "+" if self.net_extreme > 0 else "-" if self.net_extreme < 0 else "0"


@dataclass(frozen=True)
class SensitivityRecord:
    region_id: int
    start_year: int
    end_year: int
    b0: float
    b1: float
    r2: float
    n: int


def cell_regions(stack, mask):
    """Region id of each land cell, in land-cell order."""
    if mask.ids.shape != stack.shape:
        raise DataError(f"region mask shape {mask.ids.shape} does not match grid {stack.shape}")
    return mask.ids.ravel()[stack.land_cells()]


def region_columns(regions, region_id):
    cols = np.flatnonzero(np.asarray(regions) == region_id)
    if cols.size == 0:
        raise DataError(f"region {region_id} has no land cells")
    return cols


def region_series(matrix, regions, region_id, mode="sum", weights=None):
    """Per-month regional aggregate of a (time, cell) matrix.

    ``mode="sum"`` gives the deterministic total (budgets);
    ``mode="area_weighted_mean"`` weights cells by ``weights`` (areas).
    """
    m = np.asarray(matrix, dtype=np.float64)
    cols = region_columns(regions, region_id)
    if mode == "sum":
        return rowwise_sum(m[:, cols])
    if mode == "area_weighted_mean":
        if weights is None:
            raise DataError("area-weighted mean needs cell weights")
        w = np.asarray(weights, dtype=np.float64)[cols]
        return rowwise_sum(m[:, cols] * w) / reduce_sum_deterministic(w)
    raise DataError(f"unknown aggregation mode {mode!r}")


def window_net_extremes(anomalies, window_ext, events, regions, window=-1):
    """Extreme budgets (PgC) for each region present in ``regions``.

    ``anomalies`` is the full (time, cell) matrix in gC/month; ``window_ext``
    and ``events`` describe one window.
    """
    a = np.asarray(anomalies, dtype=np.float64)
    block = a[window_ext.start:window_ext.start + window_ext.pos_mask.shape[0]]
    regions = np.asarray(regions)
    out = []
    for rid in sorted(int(r) for r in np.unique(regions) if r != 0):
        cols = region_columns(regions, rid)
        sub = block[:, cols]
        pos = reduce_sum_deterministic(sub[window_ext.pos_mask[:, cols]])
        neg = reduce_sum_deterministic(sub[window_ext.neg_mask[:, cols]])
        colset = set(cols.tolist())
        mine = [e for e in events if e.cell in colset]
        neg_events = [e.integrated_anomaly for e in mine if e.sign == NEGATIVE]
        pos_pg, neg_pg = pos / G_PER_PG, neg / G_PER_PG
        out.append(RegionWindowSummary(
            rid, window, pos_pg + neg_pg, pos_pg, neg_pg, len(neg_events),
            sum(1 for e in mine if e.sign == POSITIVE),
            reduce_sum_deterministic(neg_events) / G_PER_PG))
    return out


def dominance_counts(summaries, n_regions=None):
    """Count regions dominated by positive vs negative extremes in one window."""
    n = len(summaries) if n_regions is None else n_regions
    n_pos = sum(1 for s in summaries if s.dominance == "+")
    n_neg = sum(1 for s in summaries if s.dominance == "-")
    pct = (lambda k: 100.0 * k / n) if n else (lambda k: 0.0)
    return {"n_regions": n, "n_pos": n_pos, "n_neg": n_neg,
            "n_zero": len(summaries) - n_pos - n_neg,
            "pct_pos": pct(n_pos), "pct_neg": pct(n_neg)}


def uptake_release_split(nbp_series):
    """True for uptake months (NBP > 0); zero and negative months are release."""
    return np.asarray(nbp_series, dtype=np.float64) > 0


def detrend(series, w=MA_WINDOW):
    """Series minus its centred moving average; NaN where the average is undefined."""
    x = np.asarray(series, dtype=np.float64)
    return x - moving_average(x, w)


def decade_slices(n_time, years=DECADE_YEARS):
    step = 12 * years
    return [slice(k, k + step) for k in range(0, n_time - step + 1, step)]


def sensitivity(nbp_series, tas_series, t0, region_id=0, years=DECADE_YEARS, ma_window=MA_WINDOW):
    """Decade-by-decade OLS of detrended regional NBP (GgC/month) on detrended TAS.

    Both series are detrended against their own centred moving average;
    months where either detrended value is undefined are dropped.
    """
    nbp = np.asarray(nbp_series, dtype=np.float64) / G_PER_GG
    tas = np.asarray(tas_series, dtype=np.float64)
    if nbp.shape != tas.shape:
        raise DataError("NBP and TAS series differ in length")
    y = detrend(nbp, ma_window)
    x = detrend(tas, ma_window)
    out = []
    for s in decade_slices(nbp.size, years):
        ok = np.isfinite(x[s]) & np.isfinite(y[s])
        start_year = t0[0] + (t0[1] - 1 + s.start) // 12
        if ok.sum() < MIN_DEFINED_MONTHS:
            raise DataError(f"decade from {start_year} has only {int(ok.sum())} defined months")
        fit = ols(x[s][ok], y[s][ok])
        out.append(SensitivityRecord(region_id, start_year, start_year + years - 1,
                                     fit.b0, fit.b1, fit.r2, fit.n))
    return out


def temperature_quantiles(tas_series, windows, t0, quantiles=TAS_QUANTILES):
    """Nearest-rank TAS quantiles per window plus their per-decade OLS rates.

    Returns ``(values, rates)``: ``values[k][j]`` is quantile j in window k,
    ``rates[j]`` is the trend of quantile j across window centres in °C/decade.
    """
    tas = np.asarray(tas_series, dtype=np.float64)
    slices = window_slices(windows, t0, tas.size)
    values = [[quantile_nearest_rank(tas[s], q) for q in quantiles] for s in slices]
    rates = []
    if len(windows) >= 2:
        centres = np.array([w.start_year + w.length_years / 2 for w in windows])
        for j in range(len(quantiles)):
            rates.append(ols(centres, [v[j] for v in values]).b1 * 10.0)
    else:
        rates = [math.nan] * len(quantiles)
    return values, rates
