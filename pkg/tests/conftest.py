import numpy as np
import pytest

# Release-gate checks append their PASS/FAIL lines here; the terminal
# summary hook replays them after the run so they survive output capture.
GATE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_image(rng, height, width, lo=0.0, hi=1.0):
    return rng.uniform(lo, hi, size=(height, width))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if GATE_LINES:
        terminalreporter.write_sep("=", "release gate")
        for line in GATE_LINES:
            terminalreporter.write_line(line)
