import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbpextremes.attribution import (COMBINATIONS, AttributionRecord, attribute_catalog,
                                     attribute_cell, combo_name, compound_fractions,
                                     compound_labels, dominance_summary, dominant_driver,
                                     lagged_at, lagged_driver, qualifies, sample_months)
from nbpextremes.errors import DataError
from nbpextremes.extremes import NEGATIVE, POSITIVE, TceEvent, extreme_catalog, tce_catalog
from nbpextremes.extremes import tile_windows
from nbpextremes.stats import pearson


def _rec(driver, rho, p=0.01, lag=1):
    return AttributionRecord(0, driver, lag, rho, p, 30)


def _event(sign, months):
    return TceEvent(0, sign, months[0], months[-1], tuple(months))


def _exact_rho(x, y):
    # Pearson in exact rationals; only the final square root is floating point
    x = [Fraction(v) for v in x]
    y = [Fraction(v) for v in y]
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return float(sxy) / math.sqrt(float(sxx * syy))


def test_lag_two_worked_example():
    out = lagged_driver([0, 1, 2, 3, 4], 2)
    assert np.isnan(out[:2]).all()
    assert out[2:].tolist() == [0.5, 1.5, 2.5]


def test_lag_zero_and_constant():
    d = np.array([3.0, -1.0, 2.0, 7.0])
    assert lagged_driver(d, 0).tolist() == d.tolist()
    for L in range(1, 5):
        out = lagged_driver(np.full(10, 2.5), L)
        assert np.all(out[L:] == 2.5)


def test_lag_bounds():
    with pytest.raises(DataError):
        lagged_driver(np.arange(10.0), 5)
    with pytest.raises(DataError):
        lagged_at(np.arange(10.0), 3, [2, 5])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=6, max_size=40), st.integers(1, 4))
def test_lag_matches_definition(values, L):
    out = lagged_driver(values, L)
    for t in range(L, len(values)):
        ref = sum(values[t - l] for l in range(1, L + 1)) / L
        assert out[t] == pytest.approx(ref, rel=1e-12, abs=1e-9)


def test_attribute_cell_worked_example():
    nbp_vals = [-9, -8, -7, 7, 8, 9]
    sm_vals = [-3, -2.5, -2, 2, 2.5, 3]
    rho = _exact_rho(sm_vals, nbp_vals)
    # sxy = 122, sxx = 77/2, syy = 388 in exact arithmetic
    assert rho == pytest.approx(0.998191, abs=1e-6)
    r = pearson(sm_vals, nbp_vals)
    assert r.rho == pytest.approx(rho, abs=1e-12) and r.p < 0.01

    # two TCEs per sign, each carrying the worked-example months
    n = 60
    nbp = np.zeros(n)
    sm = np.zeros(n)
    events = []
    for k, start in enumerate((5, 15, 25, 35)):
        vals = nbp_vals[:3] if k < 2 else nbp_vals[3:]
        drv = sm_vals[:3] if k < 2 else sm_vals[3:]
        months = list(range(start, start + 3))
        nbp[months] = vals
        sm[[m - 1 for m in months]] = drv  # lag 1 with L=1 reads the previous month
        events.append(_event(NEGATIVE if k < 2 else POSITIVE, months))
    (rec,) = attribute_cell(nbp, events, {"SM": sm}, lag=1)
    assert rec.driver == "SM" and rec.n == 12
    assert rec.rho == pytest.approx(rho, abs=1e-12)
    assert rec.p < 0.01


def test_attribute_cell_skips_and_drops():
    nbp = np.arange(40.0)
    one_neg = [_event(NEGATIVE, [1, 2, 3]), _event(POSITIVE, [10, 11, 12]),
               _event(POSITIVE, [20, 21, 22])]
    assert not qualifies(one_neg)
    assert attribute_cell(nbp, one_neg, {"SM": nbp}, 0) is None
    events = one_neg + [_event(NEGATIVE, [30, 31, 32])]
    recs = attribute_cell(nbp, events, {"SM": np.ones(40), "TAS": nbp}, 0)
    assert [r.driver for r in recs] == ["TAS"]


def test_lag_zero_equals_simultaneous_correlation():
    rng = np.random.default_rng(0)
    nbp, drv = rng.normal(size=200), rng.normal(size=200)
    events = [_event(NEGATIVE, [10, 11, 12]), _event(NEGATIVE, [40, 41, 42, 44]),
              _event(POSITIVE, [80, 81, 82]), _event(POSITIVE, [150, 151, 152])]
    (rec,) = attribute_cell(nbp, events, {"Prcp": drv}, 0)
    months = sample_months(events)
    ref = pearson(drv[months], nbp[months])
    assert (rec.rho, rec.p, rec.n) == (ref.rho, ref.p, ref.n)


def test_dominant_driver_examples():
    assert dominant_driver([_rec("SM", 0.8), _rec("TAS", -0.6)]) == "SM"
    assert dominant_driver([_rec("SM", 0.8, 0.05), _rec("TAS", -0.9, 0.2)]) is None
    assert dominant_driver([_rec("Prcp", 0.7), _rec("SM", 0.7)]) == "SM"
    assert dominant_driver([_rec("Prcp", 0.7, 0.001), _rec("SM", 0.7, 0.01)]) == "Prcp"
    assert dominant_driver([_rec("Fire", -0.9), _rec("SM", 0.7)]) == "Fire"
    assert dominant_driver([]) is None


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100), st.floats(-50, 50))
def test_dominant_invariant_under_rescaling(seed, a, b):
    rng = np.random.default_rng(seed)
    n = 120
    nbp = rng.normal(size=n)
    drivers = {"SM": nbp + rng.normal(0, 0.5, n), "Prcp": rng.normal(size=n),
               "TAS": -nbp + rng.normal(0, 1.0, n), "Fire": rng.normal(size=n)}
    events = [_event(NEGATIVE, [5, 6, 7]), _event(NEGATIVE, [30, 31, 32]),
              _event(POSITIVE, [60, 61, 62, 63]), _event(POSITIVE, [90, 91, 92])]
    base = dominant_driver(attribute_cell(nbp, events, drivers, 0))
    scaled = dict(drivers, TAS=a * drivers["TAS"] + b)
    assert dominant_driver(attribute_cell(nbp, events, scaled, 0)) == base


def test_synthetic_lag_one_cell():
    rng = np.random.default_rng(4)
    n = 300
    sm = rng.normal(size=n)
    nbp = np.zeros(n)
    nbp[1:] = 5.0 * sm[:-1]
    nbp += rng.normal(0, 1e-3, n)
    others = {"Prcp": rng.normal(size=n), "TAS": rng.normal(size=n), "Fire": rng.normal(size=n)}
    events = [_event(NEGATIVE, [20, 21, 22]), _event(NEGATIVE, [70, 71, 72]),
              _event(POSITIVE, [150, 151, 152]), _event(POSITIVE, [200, 201, 202, 203])]
    recs = attribute_cell(nbp, events, dict(others, SM=sm), 1)
    assert dominant_driver(recs) == "SM"
    assert next(r for r in recs if r.driver == "SM").rho >= 0.99


def test_dominance_summary():
    assert dominance_summary([("SM", 0.9), ("SM", 0.5)]) == {"SM": (100.0, "+")}
    assert dominance_summary([]) == {}
    out = dominance_summary([("SM", 0.9), ("TAS", -0.7), ("TAS", -0.8), ("Fire", 0.3)])
    assert list(out) == ["SM", "TAS", "Fire"]
    assert out["TAS"] == (50.0, "-")


def test_compound_label_examples():
    assert compound_labels([_rec("SM", 0.7), _rec("TAS", -0.65), _rec("Fire", -0.8)]) == \
        {"dry", "hot", "fire"}
    assert compound_labels([_rec("Prcp", 0.65)]) == {"dry"}
    assert compound_labels([_rec("SM", 0.6), _rec("TAS", -0.5)]) == frozenset()
    assert compound_labels([_rec("SM", -0.9), _rec("Prcp", 0.9)]) == {"wet"}
    assert compound_labels([_rec("TAS", 0.7), _rec("Fire", 0.7)]) == {"cold", "fire"}
    assert compound_labels([_rec("TAS", -0.9, p=0.06)]) == frozenset()


def test_combinations():
    assert len(COMBINATIONS) == 18
    assert COMBINATIONS[0] == frozenset()
    assert combo_name(frozenset({"fire", "dry", "hot"})) == "hot&dry&fire"
    for c in COMBINATIONS:
        assert not {"hot", "cold"} <= c and not {"dry", "wet"} <= c


def _fractions(labels, counts):
    return {combo_name(c): (inc, exc) for c, inc, exc in compound_fractions(labels, counts)}


def test_compound_fraction_examples():
    f = _fractions({0: frozenset({"hot", "dry"}), 1: frozenset({"hot", "dry"})}, {0: 3, 1: 5})
    assert f["hot"] == (1.0, 0.0)
    assert f["hot&dry"] == (1.0, 1.0)
    f = _fractions({0: frozenset({"dry"}), 1: frozenset({"dry", "fire"})}, {0: 4, 1: 4})
    assert f["dry"] == (1.0, 0.5)
    assert f["dry&fire"] == (0.5, 0.5)


def test_compound_fractions_weight_by_tces():
    f = _fractions({0: frozenset({"dry"}), 1: frozenset()}, {0: 3, 1: 1})
    assert f["dry"] == (0.75, 0.75)
    assert f["none"] == (1.0, 0.25)


label_sets = st.sampled_from(COMBINATIONS)


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.integers(0, 50), st.tuples(label_sets, st.integers(0, 20)),
                       min_size=1, max_size=20))
def test_compound_fraction_invariants(cells):
    labels = {c: v[0] for c, v in cells.items()}
    counts = {c: v[1] for c, v in cells.items()}
    out = compound_fractions(labels, counts)
    assert [c for c, _, _ in out] == list(COMBINATIONS)
    for _, inc, exc in out:
        assert 0.0 <= exc <= inc <= 1.0
    if sum(counts.values()):
        assert math.fsum(exc for _, _, exc in out) == pytest.approx(1.0, abs=1e-12)


def test_attribute_catalog_order_and_lags():
    rng = np.random.default_rng(8)
    n_t, n_c = 600, 3
    a = rng.normal(size=(n_t, n_c))
    for c in range(n_c):
        for start in (20, 90, 160, 230, 320, 390, 460, 530):
            a[start:start + 4, c] += 8 if (start // 10) % 2 else -8
    drivers = {"SM": a + rng.normal(0, 0.1, a.shape), "TAS": rng.normal(size=a.shape)}
    cat = extreme_catalog(a, tile_windows(1850, 25, 2), (1850, 1))
    tces = tce_catalog(a, cat)
    recs = attribute_catalog(a, drivers, tces, cat, lags=[0, 1])
    keys = [(r.window, r.cell, r.lag, ["SM", "TAS"].index(r.driver)) for r in recs]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)
    lag0 = [r for r in recs if r.lag == 0]
    assert lag0 and all(r.driver == "SM" and r.rho > 0.95 for r in lag0 if r.driver == "SM")
