import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

HERE = Path(__file__).resolve().parent
PROBLEM_DIR = HERE.parent / "src" / "mflq" / "problems"

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def oracle_values():
    return json.loads((HERE / "oracle_values.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
