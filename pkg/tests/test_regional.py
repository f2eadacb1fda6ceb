import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbpextremes.errors import DataError
from nbpextremes.extremes import WindowSpec, extreme_catalog, tce_catalog, tile_windows
from nbpextremes.gridstore import grid_areas
from nbpextremes.regional import (G_PER_PG, RegionWindowSummary, cell_regions, decade_slices,
                                  detrend, dominance_counts, region_series, sensitivity,
                                  temperature_quantiles, uptake_release_split,
                                  window_net_extremes)
from nbpextremes.ssa import ssa_split_many
from nbpextremes.stats import ols, reduce_sum_deterministic
from nbpextremes.synth import SynthConfig, generate


def _summary(rid, net):
    return RegionWindowSummary(rid, 0, net, max(net, 0.0), min(net, 0.0), 0, 0, 0.0)


def test_region_series_examples():
    m = np.array([[3.0, 5.0, 100.0]])
    regions = [7, 7, 9]
    assert region_series(m, regions, 7).tolist() == [8.0]
    tas = np.array([[10.0, 20.0]])
    assert region_series(tas, [1, 1], 1, "area_weighted_mean", [1.0, 1.0]).tolist() == [15.0]
    out = region_series(tas, [1, 1], 1, "area_weighted_mean", [2.0, 1.0])
    assert out[0] == pytest.approx(40.0 / 3.0, rel=1e-15)


def test_region_series_errors():
    m = np.ones((2, 2))
    with pytest.raises(DataError):
        region_series(m, [1, 1], 3)
    with pytest.raises(DataError):
        region_series(m, [1, 1], 1, "area_weighted_mean")
    with pytest.raises(DataError):
        region_series(m, [1, 1], 1, "median")


def _one_window(a):
    cat = extreme_catalog(a, [WindowSpec(1850)], (1850, 1))
    return cat[0], tce_catalog(a, cat)[0]


def test_net_extremes_example():
    a = np.zeros((300, 2))
    a[10, 0] = 2e15
    a[20, 1] = -3e15
    we, events = _one_window(a)
    (s,) = window_net_extremes(a, we, events, [4, 4])
    assert (s.pos_total, s.neg_total, s.net_extreme) == (2.0, -3.0, -1.0)
    assert s.dominance == "-"


def test_net_extremes_none():
    a = np.zeros((300, 3))
    we, events = _one_window(a)
    (s,) = window_net_extremes(a, we, events, [1, 1, 1])
    assert s.net_extreme == 0.0 and s.dominance == "0"


def test_dominance_counts():
    assert dominance_counts([_summary(r, -1.0) for r in range(26)])["pct_neg"] == 100.0
    out = dominance_counts([_summary(r, -1.0 if r < 23 else 1.0) for r in range(26)])
    assert (out["n_neg"], out["n_pos"], round(out["pct_neg"])) == (23, 3, 88)
    out = dominance_counts([_summary(r, -1.0 if r % 2 else 1.0) for r in range(26)])
    assert out["pct_pos"] == out["pct_neg"] == 50.0
    assert dominance_counts([])["pct_neg"] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.lists(st.integers(0, 3), min_size=6, max_size=6))
def test_region_budgets_additive(seed, regions):
    rng = np.random.default_rng(seed)
    a = rng.standard_t(3, size=(300, 6)) * 1e12
    we, events = _one_window(a)
    summaries = window_net_extremes(a, we, events, regions)
    for s in summaries:
        assert s.net_extreme == s.pos_total + s.neg_total
    unassigned = [c for c, r in enumerate(regions) if r == 0]
    flagged = we.pos_mask | we.neg_mask
    rest = reduce_sum_deterministic(a[:, unassigned][flagged[:, unassigned]]) / G_PER_PG
    total = reduce_sum_deterministic(a[flagged]) / G_PER_PG
    parts = math.fsum(s.net_extreme for s in summaries) + rest
    assert parts == pytest.approx(total, rel=1e-12, abs=1e-15)


def test_negative_heavy_field_matches_truth():
    cfg = SynthConfig.from_dict({"seed": 3, "extreme_cell_fraction": 1.0,
                                 "region_negative_bias": {2: 2.0, 3: 2.0, 14: 0.5, 26: 2.0}})
    o = generate(cfg)
    nbp = o.stacks["nbp"]
    anomaly = ssa_split_many(nbp.land_matrix(), 120, threads=2)[2]
    regions = cell_regions(nbp, o.regions)
    cat = extreme_catalog(anomaly, tile_windows(1850, 25, 4), (1850, 1))
    for w, (we, events) in enumerate(zip(cat, tce_catalog(anomaly, cat))):
        summaries = window_net_extremes(anomaly, we, events, regions, w)
        expected = sum(o.truth.region_injected[s.region_id][w] < 0 for s in summaries)
        assert dominance_counts(summaries)["n_neg"] == expected == 3


def test_uptake_release():
    assert uptake_release_split([1.0, -1.0, 0.0]).tolist() == [True, False, False]


def test_decade_slices_tile():
    sl = decade_slices(3012)
    assert len(sl) == 25 and sl[0] == slice(0, 120) and sl[-1] == slice(2880, 3000)
    assert all(a.stop == b.start for a, b in zip(sl, sl[1:]))


def test_sensitivity_slope_two():
    pattern = np.tile([-1.0, 0.0, 1.0], 400)
    recs = sensitivity(2e9 * pattern, pattern, (1850, 1))
    assert [r.start_year for r in recs] == list(range(1850, 1950, 10))
    for r in recs:
        assert r.b1 == pytest.approx(2.0, rel=1e-12)
    # first and last 60 months have no centred 120-month mean
    assert recs[0].n == 60 and recs[-1].n == 60 and recs[1].n == 120


def test_sensitivity_independent_noise():
    z = []
    for seed in range(200):
        rng = np.random.default_rng(seed)
        tas = rng.normal(size=600)
        nbp = rng.normal(size=600) * 1e9
        # second decade lies wholly inside the defined moving-average range
        fit = ols(detrend(tas)[120:240], detrend(nbp / 1e9)[120:240])
        rec = sensitivity(nbp, tas, (1850, 1))[1]
        assert rec.b1 == pytest.approx(fit.b1, rel=1e-9)
        z.append(rec.b1 / fit.b1_se)
    assert abs(np.mean(z)) <= 0.25
    assert np.mean(np.abs(z) <= 2.0) >= 0.9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-1e3, 1e3), st.floats(-1e12, 1e12))
def test_sensitivity_constant_invariance(seed, ct, cn):
    rng = np.random.default_rng(seed)
    tas = rng.normal(size=480)
    nbp = (-3.0 * tas + rng.normal(size=480)) * 1e9
    base = sensitivity(nbp, tas, (1850, 1))
    moved = sensitivity(nbp + cn, tas + ct, (1850, 1))
    for a, b in zip(base, moved):
        assert b.b1 == pytest.approx(a.b1, rel=1e-6, abs=1e-6)


def test_sensitivity_too_few_months():
    with pytest.raises(DataError):
        sensitivity(np.zeros(240), np.arange(240.0), (1850, 1), years=2)
    with pytest.raises(DataError):
        sensitivity(np.zeros(240), np.zeros(241), (1850, 1))


def test_quantiles_ramp_and_constant():
    windows = tile_windows(1850, 25, 4)
    vals, rates = temperature_quantiles(0.01 * np.arange(1200.0), windows, (1850, 1))
    assert rates == pytest.approx([1.2, 1.2, 1.2], rel=1e-9)
    vals, rates = temperature_quantiles(np.full(1200, 14.0), windows, (1850, 1))
    assert all(v == [14.0, 14.0, 14.0] for v in vals)
    assert rates == [0.0, 0.0, 0.0]
    _, rates = temperature_quantiles(np.zeros(300), [WindowSpec(1850)], (1850, 1))
    assert all(math.isnan(r) for r in rates)


def test_winter_amplified_warming_ratio():
    cfg = SynthConfig.from_dict({"seed": 0, "years": 250, "n_lat": 4, "n_lon": 4,
                                 "events_per_sign": 0,
                                 "tas": {"winter_warming_ratio": 1.7, "regional_sigma": 0.3}})
    o = generate(cfg)
    tas = o.stacks["tas"]
    m = tas.land_matrix()
    regions = cell_regions(tas, o.regions)
    areas = grid_areas(tas).ravel()[tas.land_cells()]
    for rid in cfg.region_ids:
        series = region_series(m, regions, rid, "area_weighted_mean", areas)
        _, rates = temperature_quantiles(series, tile_windows(1850, 25, 10), (1850, 1))
        assert rates[0] / rates[2] == pytest.approx(1.7, abs=0.1)
