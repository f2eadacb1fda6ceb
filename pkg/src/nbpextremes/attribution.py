"""Lagged single- and compound-driver attribution of NBP TCEs."""
from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateInputError
from .extremes import NEGATIVE, POSITIVE
from .stats import pearson

# Tie-break priority, highest first.
DRIVERS = ("SM", "Prcp", "TAS", "Fire")
MAX_LAG = 4
TAU = 0.6
P_MAX = 0.05
MIN_TCES_PER_SIGN = 2

MOISTURE = ("dry", "wet")
TEMPERATURE = ("hot", "cold")
CLASS_ORDER = ("hot", "cold", "dry", "wet", "fire")


@dataclass(frozen=True)
class AttributionRecord:
    cell: int
    driver: str
    lag: int
    rho: float
    p: float
    n: int
    window: int = -1


def lagged_driver(driver_anoms, L):
    """Mean of the previous ``L`` months of a driver; L=0 returns the series.

    The first L entries have no full history and are NaN.
    """
    if not 0 <= L <= MAX_LAG:
        raise DataError(f"lag {L} outside 0..{MAX_LAG}")
    d = np.asarray(driver_anoms, dtype=np.float64)
    if L == 0:
        return d.copy()
    if d.size <= L:
        raise DataError(f"series of {d.size} months too short for lag {L}")
    out = np.full(d.size, np.nan)
    acc = np.zeros(d.size - L)
    for l in range(1, L + 1):
        acc += d[L - l:d.size - l] / L
    out[L:] = acc
    return out


def lagged_at(driver_anoms, L, months):
    """Lagged driver values at absolute ``months``; each needs L months of history."""
    months = np.asarray(months, dtype=np.int64)
    if months.size and months.min() < L:
        raise DataError(f"month {int(months.min())} has fewer than {L} months of history")
    return lagged_driver(driver_anoms, L)[months]


def qualifies(events):
    """True when a cell has enough TCEs of both signs for attribution."""
    n_neg = sum(1 for e in events if e.sign == NEGATIVE)
    n_pos = sum(1 for e in events if e.sign == POSITIVE)
    return n_neg >= MIN_TCES_PER_SIGN and n_pos >= MIN_TCES_PER_SIGN


def sample_months(events):
    """Sorted extreme months of all events (both signs pooled)."""
    months = set()
    for e in events:
        months.update(e.extreme_months)
    return np.array(sorted(months), dtype=np.int64)


def attribute_cell(nbp_anoms, events, drivers, lag, offset=0, cell=-1, window=-1):
    """Correlate one cell's TCE months against each lagged driver.

    ``nbp_anoms`` and the ``drivers`` series are indexed in absolute months;
    event months are window-relative and shifted by ``offset``. Returns None
    when the cell lacks two TCEs of each sign. Drivers that are constant
    over the sample are dropped; TCE months too early in the record to
    carry ``lag`` months of history are left out of the sample.
    """
    if not qualifies(events):
        return None
    months = sample_months(events) + offset
    months = months[months >= lag]
    nbp = np.asarray(nbp_anoms, dtype=np.float64)[months]
    records = []
    if months.size < 3:
        return records
    for name in DRIVERS:
        if name not in drivers:
            continue
        x = lagged_at(drivers[name], lag, months)
        try:
            r = pearson(x, nbp)
        except DegenerateInputError:
            continue
        records.append(AttributionRecord(cell, name, lag, r.rho, r.p, r.n, window))
    return records


def dominant_driver(records, p_max=P_MAX):
    """Driver with the largest significant |rho|; None if nothing is significant."""
    passing = [r for r in records if r.p < p_max]
    if not passing:
        return None
    best = min(passing, key=lambda r: (-abs(r.rho), r.p, DRIVERS.index(r.driver)))
    return best.driver


def dominance_summary(dominants):
    """Percent of attributable cells per dominant driver, with response sign.

    ``dominants`` is an iterable of ``(driver, rho)`` pairs, one per cell that
    has a dominant driver. Returns ``{driver: (percent, sign)}`` in priority
    order, sign being '+', '-' or '0' from the median rho.
    """
    by_driver = defaultdict(list)
    for name, rho in dominants:
        by_driver[name].append(rho)
    total = sum(len(v) for v in by_driver.values())
    out = {}
    for name in DRIVERS:
        if name not in by_driver:
            continue
        med = float(np.median(by_driver[name]))
        sign = "+" if med > 0 else "-" if med < 0 else "0"
        out[name] = (100.0 * len(by_driver[name]) / total, sign)
    return out


def compound_labels(records, tau=TAU, p_max=P_MAX):
    """Set of driver classes (hot/cold, dry/wet, fire) that qualify at a cell."""
    strong = {r.driver: r.rho for r in records if abs(r.rho) > tau and r.p < p_max}
    label = set()
    moisture = strong.get("SM", strong.get("Prcp"))
    if moisture is not None:
        label.add("dry" if moisture > 0 else "wet")
    if "TAS" in strong:
        label.add("hot" if strong["TAS"] < 0 else "cold")
    if "Fire" in strong:
        label.add("fire")
    return frozenset(label)


def _combinations():
    out = []
    for temp, moist, fire in itertools.product((None,) + TEMPERATURE, (None,) + MOISTURE,
                                                (None, "fire")):
        out.append(frozenset(c for c in (temp, moist, fire) if c))
    return sorted(out, key=lambda s: (len(s), [CLASS_ORDER.index(c) for c in
                                                sorted(s, key=CLASS_ORDER.index)]))


# Every admissible label, the empty set first.
COMBINATIONS = tuple(_combinations())


def combo_name(combo):
    if not combo:
        return "none"
    return "&".join(sorted(combo, key=CLASS_ORDER.index))


def compound_fractions(labels, tce_counts):
    """Inclusive and exclusive TCE fractions for each label combination.

    ``labels`` maps cell -> label set and ``tce_counts`` maps cell -> number of
    TCEs there; only labelled cells contribute. Returns a list of
    ``(combination, inclusive, exclusive)`` in :data:`COMBINATIONS` order.
    """
    weights = {c: tce_counts.get(c, 0) for c in labels}
    total = sum(weights.values())
    out = []
    for combo in COMBINATIONS:
        if total == 0:
            out.append((combo, 0.0, 0.0))
            continue
        inc = sum(w for c, w in weights.items() if labels[c] >= combo)
        exc = sum(w for c, w in weights.items() if labels[c] == combo)
        out.append((combo, inc / total, exc / total))
    return out


def attribute_catalog(nbp_anoms, driver_anoms, tces, catalog, lags=range(MAX_LAG + 1)):
    """Attribution records for every window, qualifying cell and lag.

    ``nbp_anoms`` and each entry of ``driver_anoms`` are (time, cell)
    matrices; ``tces`` and ``catalog`` come from the extremes module.
    Output order is window, cell, lag, driver priority.
    """
    nbp = np.asarray(nbp_anoms, dtype=np.float64)
    out = []
    for w, (events, we) in enumerate(zip(tces, catalog)):
        per_cell = defaultdict(list)
        for e in events:
            per_cell[e.cell].append(e)
        for cell in sorted(per_cell):
            drivers = {k: v[:, cell] for k, v in driver_anoms.items()}
            for lag in lags:
                recs = attribute_cell(nbp[:, cell], per_cell[cell], drivers, lag,
                                      offset=we.start, cell=cell, window=w)
                if recs is None:
                    break
                out.extend(recs)
    return out
