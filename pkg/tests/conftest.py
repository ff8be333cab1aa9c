import math

import numpy as np
import pytest

from gravlab.spectral_core import Grid, SpectralField

_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the verdict of one acceptance criterion for the terminal summary."""

    def record(number: int, passed: bool, detail: str):
        _CRITERIA[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def grid64():
    return Grid(64, 2 * math.pi)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def band_limited(grid: Grid, rng, kmax: int, real: bool = True, amp: float = 1.0) -> SpectralField:
    """Random field with integer modes ``|m| <= kmax``."""
    c = np.zeros(grid.n_points, complex)
    m = grid.modes
    sel = np.abs(m) <= kmax
    c[sel] = amp * (rng.normal(size=sel.sum()) + 1j * rng.normal(size=sel.sum()))
    if not real:
        return SpectralField(grid, c, False)
    return SpectralField.from_values(grid, grid.inverse(c).real, True)
