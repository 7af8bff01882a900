import numpy as np
import pytest

# lines collected by the acceptance suite and printed at the end of the session
ACCEPTANCE_LINES: list[str] = []
REPORT_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if REPORT_LINES:
        terminalreporter.section("acceptance reports")
        for line in REPORT_LINES:
            terminalreporter.write_line(line)
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def spread_design(rng, n, d, min_dist=0.15):
    """Random points in the unit cube, kept apart so correlation matrices stay well conditioned."""
    pts, misses = [], 0
    while len(pts) < n:
        if misses > 1000:  # jammed: no room left for another point, start over
            pts, misses = [], 0
        p = rng.random(d)
        if all(np.linalg.norm(p - q) >= min_dist for q in pts):
            pts.append(p)
        else:
            misses += 1
    return np.array(pts)


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)
