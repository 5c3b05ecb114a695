import numpy as np
import pytest

from plumeinv.core import Survey, wind_from_met


def make_track(n=50, seed=0, speed=5.0, direction=220.0):
    """Random-walk flight track with a steady wind and flat concentrations."""
    rng = np.random.default_rng(seed)
    times = np.cumsum(rng.uniform(1.0, 4.0, n))
    heading = np.cumsum(rng.normal(0.0, 0.4, n))
    step = rng.uniform(100.0, 300.0, n)
    xy = np.cumsum(np.column_stack([step * np.cos(heading), step * np.sin(heading)]), axis=0)
    alt = 200.0 + np.cumsum(rng.normal(0.0, 5.0, n)).clip(-150, 150)
    winds = wind_from_met(np.full(n, speed), direction + rng.normal(0.0, 5.0, n))
    return Survey(times, np.column_stack([xy, alt]), 1800.0 + rng.normal(0, 1, n), winds)


@pytest.fixture
def track():
    return make_track()


def make_zigzag(n=50, seed=0, passes=5, length=2000.0, spacing=500.0):
    """Noisy crosswind passes stepping downwind, so wind rays cross later passes."""
    rng = np.random.default_rng(seed)
    per = n // passes
    k = np.arange(n)
    leg = np.minimum(k // per, passes - 1)
    frac = (k % per) / max(per - 1, 1)
    x = np.where(leg % 2 == 0, frac, 1 - frac) * length + rng.normal(0, 20, n)
    y = leg * spacing + rng.normal(0, 20, n)
    alt = 150.0 + rng.uniform(0, 100, n)
    times = np.cumsum(rng.uniform(2.0, 4.0, n))
    winds = wind_from_met(rng.uniform(4, 6, n), 180.0 + rng.normal(0, 10, n))
    return Survey(times, np.column_stack([x, y, alt]), 1800.0 + rng.normal(0, 1, n), winds)


CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion outcome and assert it."""
    def record(number, title, ok, detail):
        CRITERIA[number] = (title, bool(ok), detail)
        print(f"\ncriterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
        assert ok, f"criterion {number} ({title}) failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"{number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
