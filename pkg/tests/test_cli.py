import csv
import json
import shutil
import subprocess
import sys

import pytest

from nbpextremes.cli import main

SYNTH_FILES = {"nbp.gstack", "prcp.gstack", "sm.gstack", "tas.gstack", "fire.gstack",
               "regions.gstack", "regions.json", "ground_truth.json", "synth_config.json",
               "run_config.json"}

HEADERS = {
    "extremes.csv": ["window", "start_year", "end_year", "q_gC_per_month", "n_samples",
                     "n_flagged", "flagged_fraction"],
    "intensity.csv": ["year", "month", "window", "pos_intensity_gC_per_month",
                      "neg_intensity_gC_per_month"],
    "intensity_trends.csv": ["sign", "slope_gC_per_month_per_month", "slope_stderr"],
    "tce.csv": ["cell_lat", "cell_lon", "window", "sign", "start", "end", "n_extreme_months",
                "integrated_gC"],
    "attribution.csv": ["lat", "lon", "window", "driver", "lag", "rho", "p", "n"],
    "dominant.csv": ["lat", "lon", "window", "lag", "driver", "rho", "p"],
    "dominance.csv": ["window", "lag", "driver", "percent", "sign", "n_cells"],
    "compound.csv": ["window", "lag", "combination", "inclusive", "exclusive", "n_tces"],
    "compound_labels.csv": ["lat", "lon", "window", "lag", "label", "n_tces"],
    "regions.csv": ["region_id", "abbr", "window", "net_extreme_PgC", "pos_total_PgC",
                    "neg_total_PgC", "n_neg_tce", "n_pos_tce", "neg_tce_total_PgC",
                    "dominance"],
    "region_dominance.csv": ["window", "n_regions", "n_pos", "n_neg", "n_zero", "pct_pos",
                             "pct_neg"],
    "uptake_release.csv": ["region_id", "abbr", "window", "n_uptake_months",
                           "n_release_months", "pos_extreme_uptake_PgC",
                           "neg_extreme_uptake_PgC", "pos_extreme_release_PgC",
                           "neg_extreme_release_PgC"],
    "sensitivity.csv": ["region_id", "abbr", "start_year", "end_year", "n", "b0_GgC_per_month",
                        "b1_GgC_per_month_per_degC", "r2"],
    "tas_quantiles.csv": ["region_id", "abbr", "window", "q10_degC", "q50_degC", "q90_degC"],
    "tas_quantile_rates.csv": ["region_id", "abbr", "quantile", "rate_degC_per_decade"],
}
GRIDS = {f"{k}_{part}.gstack" for k in ("nbp", "prcp", "sm", "tas", "fire")
         for part in ("trend", "mac", "anomaly")}


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_synth_writes_dataset(reference_data):
    assert {p.name for p in reference_data.iterdir()} >= SYNTH_FILES
    run = json.loads((reference_data / "run_config.json").read_text())
    assert run["inputs"]["nbp"] == "nbp.gstack" and run["window_count"] == 4
    assert run["ground_truth"] == "ground_truth.json"


def test_pipeline_artifacts(reference_results):
    names = {p.name for p in reference_results.iterdir()}
    assert names == set(HEADERS) | GRIDS | {"scorecard.json"}
    for name, header in HEADERS.items():
        rows = _rows(reference_results / name)
        assert rows[0] == header, name
        assert all(len(r) == len(header) for r in rows[1:]), name
    card = json.loads((reference_results / "scorecard.json").read_text())
    assert card["tce_recall"] >= 0.9 and card["dominant_driver_accuracy"] >= 0.9


def test_compound_rows_cover_all_combinations(reference_results):
    rows = _rows(reference_results / "compound.csv")[1:]
    pooled = [r for r in rows if r[0] == "all"]
    assert len(pooled) == 18
    assert abs(sum(float(r[4]) for r in pooled) - 1.0) <= 1e-12


def test_stage_rerun_byte_identical(reference_data, tmp_path):
    cfg = str(reference_data / "run_config.json")
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["extremes", "--config", cfg, "--out", str(out)]) == 0
        outs.append(out)
    for name in ("extremes.csv", "intensity.csv", "intensity_trends.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_svg_flag(reference_data, tmp_path):
    cfg = str(reference_data / "run_config.json")
    assert main(["extremes", "--config", cfg, "--out", str(tmp_path), "--svg"]) == 0
    svg = (tmp_path / "intensity.svg").read_text()
    assert svg.startswith("<svg") or svg.startswith("<?xml")


def test_missing_input_reports_path(reference_data, tmp_path, capsys):
    data = tmp_path / "data"
    shutil.copytree(reference_data, data, ignore=shutil.ignore_patterns("results"))
    (data / "sm.gstack").unlink()
    code = main(["tce", "--config", str(data / "run_config.json"), "--out", str(tmp_path / "o")])
    err = _error(capsys)
    assert code == 3
    assert err["error"] == "DataError" and err["path"].endswith("sm.gstack")


def test_config_errors(tmp_path, capsys):
    assert main(["extremes", "--config", str(tmp_path / "absent.json")]) == 2
    assert _error(capsys)["path"].endswith("absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["extremes", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"inputs": {"nbp": "x.gstack"}, "lags": [7]}))
    assert main(["extremes", "--config", str(bad)]) == 2
    assert main(["extremes"]) == 2
    assert main(["synth", "--threads", "0", "--out", str(tmp_path / "s")]) == 2
    assert main(["synth", "--seed", "-3", "--out", str(tmp_path / "s")]) == 2


def test_scorecard_needs_ground_truth(reference_data, tmp_path, capsys):
    run = json.loads((reference_data / "run_config.json").read_text())
    run["ground_truth"] = None
    run["inputs"] = {k: str(reference_data / v) for k, v in run["inputs"].items()}
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(run))
    assert main(["scorecard", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "ground_truth" in _error(capsys)["message"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "nbpextremes", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("synth", "decompose", "extremes", "tce", "attribute", "compound", "regions",
                "sensitivity", "scorecard", "pipeline"):
        assert cmd in res.stdout


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
