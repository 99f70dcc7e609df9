from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from foliasim.errors import DegenerateInput, NonCompactManifold
from foliasim.manifold import (
    SL2,
    TORUS2,
    CellGrid,
    Point,
    cell_index,
    constraint_residual,
    manifold_from_json,
    project_array,
    random_group_point,
    random_point,
    random_points,
    retract,
    retract_array,
    sphere,
    tangent_project,
    tangent_residual,
)
from foliasim.rng import RandomStream

S2 = sphere(2)
finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


class TestRetract:
    def test_sphere_normalizes(self):
        assert np.allclose(retract(S2, [2, 0, 0]).coords, [1, 0, 0])

    def test_torus_wraps(self):
        assert np.allclose(retract(TORUS2, [1.25, -0.5]).coords, [0.25, 0.5])

    def test_sl2_scales_by_root_det(self):
        g = retract(SL2, [2, 0, 0, 1]).coords
        assert np.allclose(g, [np.sqrt(2), 0, 0, 1 / np.sqrt(2)])
        assert abs(g[0] * g[3] - g[1] * g[2] - 1) < 1e-15

    def test_degenerate_inputs(self):
        with pytest.raises(DegenerateInput):
            retract(S2, [0, 0, 0])
        with pytest.raises(DegenerateInput):
            retract(SL2, [1, 0, 0, -1])
        with pytest.raises(DegenerateInput):
            retract(TORUS2, [1, 2, 3])

    @given(arrays(float, 3, elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-3))
    def test_sphere_idempotent(self, x):
        p = retract(S2, x).coords
        assert np.max(np.abs(retract(S2, p).coords - p)) <= 1e-12

    @given(arrays(float, 2, elements=finite))
    def test_torus_idempotent(self, x):
        p = retract(TORUS2, x).coords
        assert np.all((p >= 0) & (p < 1))
        assert np.array_equal(retract(TORUS2, p).coords, p)

    @given(arrays(float, 4, elements=st.floats(-3, 3)).filter(lambda g: g[0] * g[3] - g[1] * g[2] > 1e-2))
    def test_sl2_idempotent(self, x):
        p = retract(SL2, x).coords
        assert np.max(np.abs(retract(SL2, p).coords - p)) <= 1e-12

    def test_batched_matches_single(self):
        X = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, -2.0]])
        assert np.allclose(retract_array(S2, X), [[0.6, 0.8, 0], [0, 0, -1]])


class TestTangentProjection:
    def test_sphere_examples(self):
        assert np.allclose(tangent_project(S2, Point(S2, [1, 0, 0]), [5, 1, 0]).coords, [0, 1, 0])
        assert np.allclose(tangent_project(S2, Point(S2, [0, 0, 1]), [0, 0, 3]).coords, 0)

    @given(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True), finite, finite)
    def test_torus_identity(self, x, y, a, b):
        v = tangent_project(TORUS2, Point(TORUS2, [x, y]), [a, b]).coords
        assert np.array_equal(v, [a, b])

    def test_sphere_projector_idempotent_self_adjoint(self, sphere_points):
        I = np.eye(3)
        for p in sphere_points:
            P = np.stack([project_array(S2, p, I[i]) for i in range(3)], axis=1)
            assert np.max(np.abs(P @ P - P)) <= 1e-12
            assert np.max(np.abs(P - P.T)) <= 1e-12

    @given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite), st.floats(-5, 5))
    def test_linear(self, v, w, c):
        p = Point(S2, [0.0, 0.6, 0.8])
        lhs = tangent_project(S2, p, v + c * w).coords
        rhs = tangent_project(S2, p, v).coords + c * tangent_project(S2, p, w).coords
        assert np.allclose(lhs, rhs, atol=1e-9)
        assert tangent_residual(S2, p.coords, lhs) <= 1e-9

    def test_sl2_projection_is_tangent(self):
        rng = RandomStream(5)
        for _ in range(50):
            g = random_group_point(rng)
            v = project_array(SL2, g.coords, rng.normal(size=4))
            assert tangent_residual(SL2, g.coords, v) <= 1e-9


class TestCells:
    def test_torus_floor(self):
        g = CellGrid(TORUS2, (4, 4))
        assert g.unravel(cell_index(g, Point(TORUS2, [0.3, 0.7]))) == (1, 2)
        assert g.unravel(cell_index(g, Point(TORUS2, [0.999999, 0.0]))) == (3, 0)

    def test_sphere_top_band(self):
        g = CellGrid(S2, (2, 1))
        assert g.unravel(cell_index(g, Point(S2, [0, 0, 1]))) == (1, 0)
        assert g.unravel(cell_index(g, Point(S2, [0, 0, -1]))) == (0, 0)

    def test_noncompact_rejected(self):
        with pytest.raises(NonCompactManifold):
            CellGrid(SL2, (4, 4))

    def test_measure_sums_to_volume(self):
        assert CellGrid(TORUS2, (8, 3)).cell_measure * 24 == pytest.approx(1.0)
        assert CellGrid(S2, (16, 32)).cell_measure * 512 == pytest.approx(4 * np.pi)

    def test_centers_land_in_their_cells(self):
        for m, res in ((TORUS2, (7, 5)), (S2, (16, 32))):
            g = CellGrid(m, res)
            assert np.array_equal(g.indices(g.centers()), np.arange(g.cell_count))

    def test_equal_area_binning(self):
        g = CellGrid(S2, (16, 32))
        n = 10**6
        counts = np.bincount(g.indices(random_points(S2, RandomStream(6), n)), minlength=g.cell_count)
        p = 1 / g.cell_count
        sd = np.sqrt(n * p * (1 - p))
        assert np.max(np.abs(counts - n * p)) <= 5 * sd


class TestSampling:
    def test_torus_deterministic(self):
        a = random_point(TORUS2, RandomStream(9)).coords
        b = random_point(TORUS2, RandomStream(9)).coords
        assert np.array_equal(a, b) and np.all((a >= 0) & (a < 1))

    def test_sphere_uniform_mean_and_norm(self):
        X = random_points(S2, RandomStream(10), 10**5)
        assert abs(X[:, 0].mean()) <= 0.01
        assert np.max(np.abs(np.linalg.norm(X, axis=1) - 1)) <= 1e-12

    def test_sl2_needs_group_sampler(self):
        with pytest.raises(NonCompactManifold):
            random_point(SL2, RandomStream(1))
        g = random_group_point(RandomStream(1)).coords
        assert np.all(np.abs(g) <= 2) and constraint_residual(SL2, g) <= 1e-12


class TestIds:
    def test_points_validate_constraints(self):
        with pytest.raises(ValueError):
            Point(S2, [1, 1, 0])
        with pytest.raises(ValueError):
            Point(TORUS2, [1.0, 0.0])
        with pytest.raises(ValueError):
            Point(TORUS2, [np.nan, 0.0])

    def test_json_round_trip(self):
        for m in (TORUS2, SL2, sphere(1), sphere(4)):
            assert manifold_from_json(m.to_json()) == m

    def test_dimensions(self):
        assert (TORUS2.dim, S2.dim, SL2.dim) == (2, 2, 3)
        assert not SL2.compact and S2.compact
        with pytest.raises(ValueError):
            sphere(0)
