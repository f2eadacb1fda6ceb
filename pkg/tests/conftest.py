import json

import pytest

from nbpextremes.cli import main

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def reference_data(tmp_path_factory):
    """Synthetic reference dataset written by the CLI; returns its directory."""
    out = tmp_path_factory.mktemp("reference") / "synth"
    assert main(["synth", "--preset", "reference", "--seed", "0", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="session")
def reference_results(reference_data):
    """Directory holding a one-thread pipeline run over the reference dataset."""
    cfg = reference_data / "run_config.json"
    assert main(["pipeline", "--config", str(cfg), "--threads", "1"]) == 0
    return reference_data / json.loads(cfg.read_text())["output_dir"]


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion."""
    def _report(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed
    return _report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)

