from __future__ import annotations

import numpy as np
import pytest

from foliasim.histogram import OccupationHistogram
from foliasim.manifold import TORUS2, CellGrid, sphere


def test_counts_sum_to_samples():
    g = CellGrid(TORUS2, (4, 4))
    h = OccupationHistogram.empty(g)
    h.add_points(np.array([[0.1, 0.1], [0.1, 0.12], [0.9, 0.6]]))
    h.add_points(np.empty((0, 2)))
    assert h.total_samples == 3 == int(h.counts.sum())
    assert h.occupied.tolist() == [0, 14]
    assert np.isclose(h.weights.sum(), 1.0)


def test_merge_adds_and_checks_grid():
    g = CellGrid(TORUS2, (4, 4))
    a, b = OccupationHistogram.empty(g), OccupationHistogram.empty(g)
    a.add_points(np.array([[0.1, 0.1]]))
    b.add_points(np.array([[0.1, 0.1], [0.5, 0.5]]))
    a.merge(b)
    assert a.counts[0] == 2 and a.total_samples == 3
    with pytest.raises(ValueError):
        a.merge(OccupationHistogram.empty(CellGrid(TORUS2, (2, 2))))


def test_csv_format():
    g = CellGrid(TORUS2, (2, 2))
    h = OccupationHistogram.empty(g)
    h.add_points(np.array([[0.1, 0.1], [0.1, 0.1], [0.6, 0.1], [0.6, 0.6]]))
    assert h.to_csv().splitlines() == ["cell_id,count,weight", "0,2,0.5", "1,0,0", "2,1,0.25", "3,1,0.25"]


def test_pgm_format():
    g = CellGrid(TORUS2, (2, 3))
    h = OccupationHistogram.empty(g)
    h.add_points(np.array([[0.1, 0.1], [0.1, 0.1], [0.6, 0.9]]))
    blob = h.to_pgm()
    header = b"P5\n3 2\n255\n"
    assert blob.startswith(header)
    assert list(blob[len(header):]) == [255, 0, 0, 0, 0, 128]


def test_empty_exports():
    h = OccupationHistogram.empty(CellGrid(sphere(2), (2, 2)))
    assert h.weights.tolist() == [0.0] * 4
    assert h.to_pgm().endswith(bytes(4))
    s = h.summary()
    assert s["occupied_cells"] == 0 and s["coverage_fraction"] == 0.0
    assert s["grid"]["resolution"] == [2, 2]
