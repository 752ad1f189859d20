import numpy as np
import pytest

from dtireg.basis import band_limited_field
from dtireg.fields import GridSpec, VelocityField


def unit_cube(n, nt=2, tau=1.0):
    return GridSpec((n,) * 3, spacing=(1.0 / (n - 1),) * 3, tau=tau, nt=nt)


def interior_field(grid, fn):
    """Velocity equal to ``fn(x)`` at every node, forced to zero on the boundary."""
    x = grid.nodes()
    s = np.broadcast_to(fn(x), grid.dims + (3,))
    return VelocityField.from_array(grid, np.broadcast_to(s, (grid.nt,) + s.shape))


@pytest.fixture(scope="session")
def smooth_field():
    """Band-limited field on the unit cube: 16^3 nodes, 3 modes, sup speed 0.05."""
    return band_limited_field(unit_cube(16, nt=5), 3, 0.05, seed=1)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Print one PASS/FAIL line for a criterion; returns whether every part passed.

    ``parts`` holds ``(label, value, limit, ok)`` tuples.
    """

    def record(criterion, parts):
        ok = all(p[3] for p in parts)
        detail = "; ".join(f"{label} {value:.3e} (limit {limit:.1e})" for label, value, limit, _ in parts)
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
