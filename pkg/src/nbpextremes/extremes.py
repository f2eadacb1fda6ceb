"""Window thresholds, extreme masks, intensities and time-continuous extreme events."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .stats import quantile_nearest_rank, reduce_sum_deterministic, rowwise_sum

EXTREME_QUANTILE = 0.95
MIN_RUN = 3  # one season
MAX_GAP = 2  # months; a gap of MIN_RUN or more splits events

POSITIVE = 1
NEGATIVE = -1
SIGN_NAMES = {POSITIVE: "positive", NEGATIVE: "negative"}


@dataclass(frozen=True)
class WindowSpec:
    start_year: int
    length_years: int = 25

    @property
    def end_year(self):
        return self.start_year + self.length_years - 1

    @property
    def label(self):
        return f"{self.start_year}-{self.end_year}"

    def month_slice(self, t0):
        """Slice of time indices covered by the window for a record starting at ``t0``."""
        start = (self.start_year - t0[0]) * 12 - (t0[1] - 1)
        return slice(start, start + 12 * self.length_years)


def tile_windows(start_year=1850, length_years=25, count=10):
    """Contiguous windows: 1850-74, 1875-99, ... by default."""
    if length_years < 1 or count < 1:
        raise ConfigError("window length and count must be positive")
    return [WindowSpec(start_year + k * length_years, length_years) for k in range(count)]


def window_slices(windows, t0, n_time):
    """Validated time slices; windows must be contiguous and inside the record."""
    slices = [w.month_slice(t0) for w in windows]
    for w, s in zip(windows, slices):
        if s.start < 0 or s.stop > n_time:
            raise ConfigError(f"window {w.label} extends outside the data record")
    for a, b in zip(slices, slices[1:]):
        if b.start != a.stop:
            raise ConfigError("windows must tile the record contiguously")
    return slices


def threshold_q(anomalies):
    """Nearest-rank 95th percentile of |anomaly| over every sample given."""
    a = np.asarray(anomalies, dtype=np.float64)
    if a.size == 0:
        raise DataError("empty window: no anomalies to threshold")
    return quantile_nearest_rank(np.abs(a), EXTREME_QUANTILE)


def extreme_masks(anomalies, q):
    """Strict exceedance masks (positive: a > q, negative: a < -q)."""
    if q < 0:
        raise DataError(f"threshold must be non-negative, got {q}")
    a = np.asarray(anomalies, dtype=np.float64)
    return a > q, a < -q


def intensity_series(anomalies, pos_mask, neg_mask):
    """Per-month sums of flagged anomalies across cells, split by sign.

    Returns ``(positive, negative)`` series of length n_time.
    """
    a = np.asarray(anomalies, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
        pos_mask = np.asarray(pos_mask)[:, None]
        neg_mask = np.asarray(neg_mask)[:, None]
    return rowwise_sum(np.where(pos_mask, a, 0.0)), rowwise_sum(np.where(neg_mask, a, 0.0))


@dataclass(frozen=True, eq=False)
class WindowExtremes:
    """Extremes for one window over a (time, cell) anomaly block."""

    window: WindowSpec
    start: int
    q: float
    pos_mask: np.ndarray
    neg_mask: np.ndarray
    pos_intensity: np.ndarray
    neg_intensity: np.ndarray

    @property
    def n_samples(self):
        return self.pos_mask.size

    @property
    def n_flagged(self):
        return int(self.pos_mask.sum() + self.neg_mask.sum())

    @property
    def flagged_fraction(self):
        return self.n_flagged / self.n_samples


def window_extremes(anomalies, window, t0):
    """Threshold, masks and intensities for one window of a (time, cell) matrix."""
    a = np.asarray(anomalies, dtype=np.float64)
    s = window_slices([window], t0, a.shape[0])[0]
    block = a[s]
    q = threshold_q(block)
    pos, neg = extreme_masks(block, q)
    pi, ni = intensity_series(block, pos, neg)
    return WindowExtremes(window, s.start, q, pos, neg, pi, ni)


def extreme_catalog(anomalies, windows, t0):
    a = np.asarray(anomalies, dtype=np.float64)
    window_slices(windows, t0, a.shape[0])
    return [window_extremes(a, w, t0) for w in windows]


@dataclass(frozen=True)
class TceEvent:
    cell: int
    sign: int
    start: int
    end: int
    extreme_months: tuple
    integrated_anomaly: float = 0.0
    window: int = -1

    @property
    def n_extreme_months(self):
        return len(self.extreme_months)

    @property
    def sign_name(self):
        return SIGN_NAMES[self.sign]


def tce_spans(mask):
    """Flagged-month groups forming TCEs in a boolean series.

    Flagged months closer than MIN_RUN apart (a gap of at most MAX_GAP
    unflagged months) are merged; a merged group counts only if it holds
    at least one run of MIN_RUN consecutive flagged months.
    """
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size < MIN_RUN:
        return []
    breaks = np.flatnonzero(np.diff(idx) > MAX_GAP + 1) + 1
    out = []
    for group in np.split(idx, breaks):
        if group.size >= MIN_RUN and np.any(group[MIN_RUN - 1:] - group[:1 - MIN_RUN] == MIN_RUN - 1):
            out.append(group)
    return out


def detect_tces(cell_mask, sign, anomalies=None, cell=-1, window=-1):
    """TCE events of one sign in one cell's window mask."""
    if sign not in SIGN_NAMES:
        raise DataError(f"sign must be +1 or -1, got {sign}")
    a = None if anomalies is None else np.asarray(anomalies, dtype=np.float64)
    events = []
    for group in tce_spans(cell_mask):
        total = reduce_sum_deterministic(a[group]) if a is not None else 0.0
        events.append(TceEvent(cell, sign, int(group[0]), int(group[-1]),
                               tuple(int(i) for i in group), total, window))
    return events


def tce_catalog(anomalies, catalog):
    """Per-window event lists, ordered by cell, then sign (negative first), then start.

    ``anomalies`` is the full (time, cell) matrix the catalog was built from.
    """
    a = np.asarray(anomalies, dtype=np.float64)
    out = []
    for w, we in enumerate(catalog):
        block = a[we.start:we.start + we.pos_mask.shape[0]]
        events = []
        for c in range(block.shape[1]):
            for sign, mask in ((NEGATIVE, we.neg_mask), (POSITIVE, we.pos_mask)):
                if mask[:, c].any():
                    events.extend(detect_tces(mask[:, c], sign, block[:, c], c, w))
        out.append(events)
    return out
