from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def sphere_points():
    from foliasim.manifold import random_points, sphere
    from foliasim.rng import RandomStream

    return random_points(sphere(2), RandomStream(2024), 100)


def leaf_cells(x0: float, y0: float, slope: float, period: float, res: int, step: float = 1e-4) -> set[int]:
    """Cells of a res x res torus grid met by the line (x0 + t, y0 + slope t), t in [0, period)."""
    t = np.arange(0.0, period, step)
    x = np.mod(x0 + t, 1.0)
    y = np.mod(y0 + slope * t, 1.0)
    i = np.minimum(np.floor(x * res), res - 1).astype(int)
    j = np.minimum(np.floor(y * res), res - 1).astype(int)
    return set((i * res + j).tolist())
