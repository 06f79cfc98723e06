import numpy as np
import pytest

from gridsentinel.config import ScenarioConfig
from gridsentinel.detector import calibrate
from gridsentinel.harness import detector_config, region_model

ACCEPTANCE = {}
NOTES = {}


@pytest.fixture(scope="session")
def detector():
    """Detector calibrated once for the default plant at both magnitudes the
    scenario tests use."""
    cfg = ScenarioConfig(seed=0)
    return calibrate(region_model(cfg), detector_config(cfg), magnitudes=[0.08, 20.0],
                     rng=np.random.default_rng(20240601), beta_runs=20_000)


@pytest.fixture
def note(request):
    """Attach a measured value to the acceptance summary line of this test."""
    def add(text):
        NOTES.setdefault(request.node.nodeid, []).append(text)
    return add


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        ACCEPTANCE[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in sorted(ACCEPTANCE.items(), key=lambda kv: kv[0].split("::")[-1]):
        name = nodeid.split("::")[-1]
        status = "PASS" if outcome == "passed" else "FAIL"
        extra = "; ".join(NOTES.get(nodeid, []))
        terminalreporter.write_line(f"{status} {name}" + (f"  [{extra}]" if extra else ""))
