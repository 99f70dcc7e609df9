from __future__ import annotations

import json
import math

import numpy as np
import pytest

from foliasim.dynamics import heun_states
from foliasim.errors import BadParams, NonCompactManifold, UnknownScenario
from foliasim.manifold import SL2, Point, random_group_point, random_points, tangent_residual
from foliasim.rng import RandomStream
from foliasim.scenarios import (
    SCENARIO_NAMES,
    Budgets,
    bracket_relation_errors,
    build_scenario,
    list_scenarios,
    rational_slope,
)
from foliasim.vectorfield import TorusTrig

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def test_half_slope_scenario():
    sc = build_scenario("torus_line", {"a": 0.5})
    assert sc.expected == {"reach": "NotDense", "support": "NotDense", "constancy": "NotDense"}
    assert (sc.params["m"], sc.params["n"]) == (1, 2)
    X = random_points(sc.manifold, RandomStream(0), 200)
    want = np.sin(2 * np.pi * (X[:, 0] - 2 * X[:, 1])) ** 2
    assert np.allclose(sc.density.values(X), want, atol=1e-14)
    f = sc.constancy_battery[0]
    assert [f(p) for p in sc.constancy_starts] == pytest.approx([0.0, 1.0], abs=1e-15)


def test_golden_slope_scenario():
    sc = build_scenario("torus_line", {"a": GOLDEN})
    assert sc.params["rational"] is False and sc.density is None
    assert set(sc.expected.values()) == {"Dense"}


def test_sphere_height_scenario():
    sc = build_scenario("sphere_height", {"n": 2})
    assert [p.coords.tolist() for p in sc.markers] == [[1, 0, 0], [-1, 0, 0]]
    assert sc.harmonic_witness([0.6, 0.8, 0]) == pytest.approx(0.64)
    assert sc.expected is None


def test_torus_pair_scenario():
    sc = build_scenario("torus_pair")
    assert sc.expected_rank == 2 and set(sc.expected.values()) == {"Dense"}


def test_catalog():
    cat = list_scenarios()
    assert [c["name"] for c in cat] == list(SCENARIO_NAMES) and len(cat) == 6
    for c in cat:
        sc = build_scenario(c["name"], c["defaults"] | ({"a": 0.5} if c["name"] == "torus_line" else {}))
        assert sc.name == c["name"]
        json.dumps(sc.to_json())
    sl2 = next(c for c in cat if c["name"] == "sl2_frame")
    assert sl2["bracket_only"] and "bracket-only" in sl2["description"]
    assert list_scenarios() == cat


@pytest.mark.parametrize("name, params", [
    ("torus_line", {"a": 0.5}), ("torus_line", {"a": GOLDEN}), ("torus_pair", {}), ("torus_bracket", {}),
    ("sphere_height", {"n": 2}), ("sphere_height", {"n": 4}), ("sphere_bm", {}), ("sl2_frame", {}),
])
def test_fields_tangent_at_random_points(name, params):
    sc = build_scenario(name, params)
    rng = RandomStream(1)
    m = sc.manifold
    pts = [random_group_point(rng).coords for _ in range(100)] if m == SL2 else random_points(m, rng, 100)
    for x in pts:
        p = Point(m, x)
        for f in sc.family.members:
            v = f.eval(p).coords
            assert np.all(np.isfinite(v))
            assert tangent_residual(m, x, v) <= 1e-9


@pytest.mark.parametrize("a, mn", [(0.5, (1, 2)), (2 / 3, (2, 3)), (-0.75, (-3, 4)), (3.0, (3, 1))])
def test_rational_leaf_invariant_conserved(a, mn):
    sc = build_scenario("torus_line", {"a": a})
    m, n = mn
    assert (sc.params["m"], sc.params["n"]) == mn
    x0 = sc.start.coords
    c0 = m * x0[0] - n * x0[1]
    worst = 0.0
    for chunk in heun_states(sc.sde_system, x0, 10**6, 0.01, RandomStream(2)):
        d = m * chunk[:, 0] - n * chunk[:, 1] - c0
        worst = max(worst, float(np.max(np.abs(d - np.round(d)))))
    assert worst <= 1e-9


@pytest.mark.parametrize("a", [0.5, 2 / 3, -0.75, 3.0, 0.0])
def test_rational_starts_separate_the_leaf_function(a):
    sc = build_scenario("torus_line", {"a": a})
    m, n = sc.params["m"], sc.params["n"]
    f = TorusTrig(m, -n, "sin")
    assert [f(p) for p in sc.constancy_starts] == pytest.approx([0.0, 1.0], abs=1e-12)


def test_rational_slope_detection():
    assert rational_slope(0.5) == (1, 2)
    assert rational_slope(0.001) == (1, 1000)
    assert rational_slope(GOLDEN) is None
    assert rational_slope(math.sqrt(2)) is None


def test_bad_params():
    with pytest.raises(BadParams):
        build_scenario("torus_line", {"a": 0.5, "rational": False})
    with pytest.raises(BadParams):
        build_scenario("torus_line", {"a": GOLDEN, "rational": True})
    with pytest.raises(BadParams):
        build_scenario("torus_line", {"a": 0.5, "m": 1, "n": 3})
    with pytest.raises(BadParams):
        build_scenario("torus_line", {"a": 0.5, "m": 1})
    with pytest.raises(BadParams):
        build_scenario("torus_line", {"a": "half"})
    with pytest.raises(BadParams):
        build_scenario("torus_pair", {"a": 0.5})
    with pytest.raises(BadParams):
        build_scenario("sphere_height", {"n": 1})
    assert build_scenario("torus_line", {"a": 0.5, "m": 2, "n": 4, "rational": True}).params["m"] == 1


def test_unknown_scenario():
    with pytest.raises(UnknownScenario) as info:
        build_scenario("klein_bottle")
    assert info.value.code == "E_UNKNOWN_SCENARIO"


def test_sl2_is_bracket_only():
    sc = build_scenario("sl2_frame")
    with pytest.raises(NonCompactManifold):
        sc.sde_system
    errs = bracket_relation_errors(sc, 100, RandomStream(3))
    assert errs["max_error"] <= 1e-5 and len(errs["relations"]) == 3
    with pytest.raises(BadParams):
        bracket_relation_errors(build_scenario("torus_pair"), 10, RandomStream(3))


def test_budgets():
    b = Budgets()
    assert b.replace(T=10.0, burn_in=1.0).T == 10.0
    assert b.replace(burn_in=None).burn_in is None
    with pytest.raises(BadParams):
        Budgets(dt=0.0)
    with pytest.raises(BadParams):
        Budgets(T=1.0, burn_in=2.0)
    with pytest.raises(BadParams):
        b.replace(foo=1)
    assert Budgets(**{**b.to_json(), "grid": tuple(b.to_json()["grid"])}) == b
