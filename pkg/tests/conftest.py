import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("hycnn", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "hycnn"))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction runs")


@pytest.fixture
def rng():
    from hycnn import Rng
    return Rng(1234)


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("HYCNN_OUTPUT_ROOT", str(tmp_path))
    return tmp_path


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8))


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
