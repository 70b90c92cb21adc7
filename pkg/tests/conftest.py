import numpy as np
import pytest

from pointattn.cloud import seeded_rng


@pytest.fixture
def rng():
    return seeded_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training runs")


_ACCEPTANCE = []


def record_acceptance(criterion, ok, detail):
    _ACCEPTANCE.append((criterion, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
