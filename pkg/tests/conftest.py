import numpy as np
import pytest

from qsched.rate_region import ChannelModel

ACCEPTANCE_LINES: list[str] = []


def record(label: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {label}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def swap_model():
    """Two equiprobable states that swap which user has the strong link."""
    return ChannelModel.from_vertex_lists([0.5, 0.5], [[[2, 0], [0, 1]], [[1, 0], [0, 2]]])


@pytest.fixture
def segment_model():
    return ChannelModel.single([[1, 0], [0, 1]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
