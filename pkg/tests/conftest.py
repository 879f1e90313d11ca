import os

import numpy as np
import pytest

# One line per acceptance criterion, filled in by test_acceptance.py.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    # config overrides from the caller's shell must not leak into tests
    for var in list(os.environ):
        if var.startswith("BEAMTRACK_") and var not in ("BEAMTRACK_PURE_PYTHON",):
            monkeypatch.delenv(var, raising=False)
