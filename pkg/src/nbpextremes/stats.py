"""Shared numerical kernels: quantiles, correlation, regression, smoothing, reductions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _sps

from .errors import DataError, DegenerateInputError


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    p: float
    n: int


@dataclass(frozen=True)
class OlsFit:
    b0: float
    b1: float
    r2: float
    n: int
    b1_se: float = math.nan


def quantile_nearest_rank(values, p):
    """Element at 1-based rank ceil(p*n) of the ascending sort."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise DataError("quantile of an empty sample")
    if not 0 < p <= 1:
        raise DataError(f"quantile fraction {p} outside (0, 1]")
    # rounding guard so that e.g. 0.95 * 100 lands on rank 95, not 96
    rank = max(1, math.ceil(round(p * v.size, 9)))
    return float(np.partition(v, rank - 1)[rank - 1])


def pearson(x, y):
    """Product-moment correlation with a two-sided Student-t p-value."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("pearson needs two 1-d series of equal length")
    n = x.size
    if n < 3:
        raise DataError(f"pearson needs n >= 3, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataError("non-finite input to pearson")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("zero variance in correlation input")
    rho = float(dx @ dy) / math.sqrt(sxx * syy)
    rho = min(1.0, max(-1.0, rho))
    if abs(rho) == 1.0:
        return CorrelationResult(rho, 0.0, n)
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = float(2.0 * _sps.t.sf(abs(t), n - 2))
    return CorrelationResult(rho, min(1.0, p), n)


def ols(x, y):
    """Least-squares fit of y = b0 + b1*x."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("ols needs two 1-d series of equal length")
    n = x.size
    if n < 2:
        raise DataError(f"ols needs n >= 2, got {n}")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    dy = y - ym
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateInputError("zero variance in regressor")
    b1 = float(dx @ dy) / sxx
    b0 = float(ym - b1 * xm)
    resid = dy - b1 * dx
    sse = float(resid @ resid)
    syy = float(dy @ dy)
    r2 = 1.0 if syy == 0.0 else min(1.0, max(0.0, 1.0 - sse / syy))
    se = math.sqrt(sse / (n - 2) / sxx) if n > 2 else math.nan
    return OlsFit(b0, b1, r2, n, se)


def moving_average(series, w):
    """Centred moving average; undefined edge points are NaN.

    Odd ``w`` averages the w points centred on each sample, leaving
    (w-1)/2 undefined points per edge. Even ``w`` uses the symmetric
    2xw form (w+1 points, half weight on the two ends) so the window stays
    centred; w/2 points per edge are undefined.
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    if w < 1 or w > n:
        raise DataError(f"moving-average window {w} outside 1..{n}")
    out = np.full(n, np.nan)
    if w % 2:
        h = (w - 1) // 2
        out[h:n - h] = np.lib.stride_tricks.sliding_window_view(x, w).sum(axis=1) / w
        return out
    h = w // 2
    if w + 1 > n:
        raise DataError(f"even window {w} needs at least {w + 1} points")
    win = np.lib.stride_tricks.sliding_window_view(x, w + 1)
    out[h:n - h] = (win[:, 1:-1].sum(axis=1) + 0.5 * (win[:, 0] + win[:, -1])) / w
    return out


def linear_trend(series):
    """OLS slope of the series against its time index, in units per step."""
    y = np.asarray(series, dtype=np.float64)
    if y.size < 2:
        raise DataError("trend needs at least two points")
    return ols(np.arange(y.size, dtype=np.float64), y).b1


def reduce_sum_deterministic(values):
    """Correctly rounded sum; independent of ordering and partitioning."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        return 0.0
    return math.fsum(v.tolist())


def partial_sums(values):
    """Exact non-overlapping partials of a chunk (Shewchuk).

    Partials from any chunking of a sequence, concatenated and passed to
    :func:`reduce_sum_deterministic`, give the same bits as summing the
    whole sequence at once.
    """
    partials = []
    for x in np.asarray(values, dtype=np.float64).ravel().tolist():
        i = 0
        for y in partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                partials[i] = lo
                i += 1
            x = hi
        partials[i:] = [x]
    return partials


def rowwise_sum(matrix):
    """Deterministic sum along the last axis of a 2-d array."""
    m = np.asarray(matrix, dtype=np.float64)
    return np.array([math.fsum(row) for row in m.tolist()], dtype=np.float64)
