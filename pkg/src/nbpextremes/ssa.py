"""Singular spectrum analysis: trend / modulated annual cycle / anomaly split."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError

DEFAULT_WINDOW = 120
TREND_MIN_PERIOD = 120.0
MAC_PERIODS = (12.0, 6.0, 4.0, 3.0, 2.4, 2.0)
# months, at the 12-month fundamental; converted to a frequency band that
# is applied unchanged at every harmonic
MAC_TOLERANCE = 0.35
# triples below this fraction of the leading singular value are numerical noise
RANK_RTOL = 1e-12


@dataclass(frozen=True)
class Eigentriple:
    sigma: float
    u: np.ndarray
    v: np.ndarray
    dominant_period: float


@dataclass(frozen=True)
class Decomposition:
    trend: np.ndarray
    mac: np.ndarray
    anomaly: np.ndarray


def embed(series, L):
    """Hankel trajectory matrix, element (i, j) = series[i + j]."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("embed needs a 1-d series")
    if not 2 <= L <= x.size / 2:
        raise DataError(f"window L={L} outside 2..{x.size // 2}")
    return np.lib.stride_tricks.sliding_window_view(x, L).T.copy()


def _svd(trajectory):
    try:
        u, s, vt = np.linalg.svd(trajectory, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    if not np.all(np.isfinite(s)):
        raise NumericalError("SVD returned non-finite singular values")
    return u, s, vt


def _periods(u_columns):
    """Dominant period of each column of a (L, r) matrix of eigenvectors."""
    L = u_columns.shape[0]
    power = np.abs(np.fft.rfft(u_columns, n=L, axis=0)) ** 2
    k = np.argmax(power, axis=0)
    with np.errstate(divide="ignore"):
        return np.where(k == 0, math.inf, L / np.maximum(k, 1))


def dominant_period(u):
    """Period (months) at the periodogram peak of ``u``; inf for the zero bin."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.size < 4:
        raise DataError("dominant_period needs a vector of length >= 4")
    return float(_periods(u[:, None])[0])


def decompose(trajectory):
    """SVD of a trajectory matrix as eigentriples ordered by singular value."""
    u, s, vt = _svd(np.asarray(trajectory, dtype=np.float64))
    periods = _periods(u)
    return [Eigentriple(float(s[i]), u[:, i], vt[i], float(periods[i])) for i in range(s.size)]


def diagonal_average(matrix):
    """Hankelize an (L, K) matrix back into a series of length L + K - 1."""
    L, K = matrix.shape
    out = np.zeros(L + K - 1)
    for i in range(L):
        out[i:i + K] += matrix[i]
    counts = np.minimum.reduce([np.arange(1, L + K), np.full(L + K - 1, min(L, K)),
                                np.arange(L + K - 1, 0, -1)])
    return out / counts


def classify_periods(periods, trend_min_period=TREND_MIN_PERIOD,
                     harmonics=MAC_PERIODS, tol=MAC_TOLERANCE):
    """Boolean (trend, mac) membership for each dominant period.

    A period is cycle when its frequency lies within ``tol / 12**2`` cycles
    per month of a harmonic, i.e. ``tol`` months either side of 12 months and
    the same frequency band around 6, 4, 3, 2.4 and 2 months.
    """
    periods = np.asarray(periods, dtype=np.float64)
    trend = periods >= trend_min_period
    freq = 1.0 / periods
    df = tol / 144.0
    mac = np.zeros(periods.shape, dtype=bool)
    for h in harmonics:
        mac |= np.abs(freq - 1.0 / h) <= df * (1 + 1e-9)
    return trend, mac & ~trend


def ssa_split(series, L=DEFAULT_WINDOW, tol=MAC_TOLERANCE):
    """Split a monthly series into trend, modulated annual cycle and anomaly.

    Eigentriples whose eigenvector peaks at a period of 120 months or
    longer (or at zero frequency) form the trend; those peaking within
    ``tol`` months of 12 months, or the equivalent frequency band around one
    of its harmonics, form the cycle. The
    anomaly is the residual, so the three parts always add back up.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("ssa_split needs a 1-d series")
    if x.size < 3 * L:
        raise DataError(f"series of {x.size} months too short for L={L} (need {3 * L})")
    if not np.all(np.isfinite(x)):
        raise DataError("series contains non-finite values")
    u, s, vt = _svd(embed(x, L))
    keep = s > RANK_RTOL * s[0] if s[0] > 0 else np.zeros(s.size, dtype=bool)
    trend_sel, mac_sel = classify_periods(_periods(u), tol=tol)
    parts = []
    for sel in (trend_sel & keep, mac_sel & keep):
        if sel.any():
            parts.append(diagonal_average((u[:, sel] * s[sel]) @ vt[sel]))
        else:
            parts.append(np.zeros(x.size))
    trend, mac = parts
    return Decomposition(trend, mac, x - trend - mac)


def ssa_split_many(matrix, L=DEFAULT_WINDOW, threads=1):
    """Apply :func:`ssa_split` to every column of a (time, cells) matrix.

    Results are assembled in column order, so output is independent of the
    worker count.
    """
    m = np.asarray(matrix, dtype=np.float64)
    cols = [m[:, j] for j in range(m.shape[1])]
    if threads > 1 and len(cols) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: ssa_split(c, L), cols))
    else:
        results = [ssa_split(c, L) for c in cols]
    shape = m.shape
    trend = np.empty(shape)
    mac = np.empty(shape)
    anomaly = np.empty(shape)
    for j, d in enumerate(results):
        trend[:, j] = d.trend
        mac[:, j] = d.mac
        anomaly[:, j] = d.anomaly
    return trend, mac, anomaly
