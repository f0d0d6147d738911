import numpy as np
import pytest

from segfusion.core import CameraIntrinsics

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def intr():
    return CameraIntrinsics(250.0, 250.0, 160.0, 120.0, 320, 240)


@pytest.fixture
def small_intr():
    return CameraIntrinsics.default(64, 48)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def report():
    """Record one acceptance line, shown in the terminal summary."""

    def _report(name: str, passed: bool, detail: str = ""):
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip())
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
