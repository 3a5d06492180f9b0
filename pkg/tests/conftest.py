from pathlib import Path

import pytest

from theraagent.backend import Script, ScriptedBackend
from theraagent.core import PatientCase

SCENARIO = Path(__file__).parent / "data" / "scenario"
GOLDEN = Path(__file__).parent / "golden"

# Filled by test_acceptance; printed after the run.
ACCEPTANCE_RESULTS: dict[str, bool] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")


@pytest.fixture
def case():
    return PatientCase(
        id="c1",
        department="respiratory",
        clinical_info="70-year-old former smoker",
        findings="dyspnea, basal fibrosis",
        diagnosis="CPFE",
    )


def make_backend(entries, default=None):
    return ScriptedBackend(Script(dict(entries), default))
