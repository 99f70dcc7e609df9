from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from foliasim.errors import ParseError
from foliasim.exprparse import Term, parse_torus_expr


def test_constant_field():
    assert parse_torus_expr("1*dx + 0.5*dy") == [Term(1.0, None, 0, 0, "dx"), Term(0.5, None, 0, 0, "dy")]


def test_trig_term_without_coefficient():
    assert parse_torus_expr("sin(1,0)*dy") == [Term(1.0, "sin", 1, 0, "dy")]


def test_whitespace_and_signs():
    terms = parse_torus_expr("  -2.5e-1 * cos( 0 , -3 ) * dx-1*dy ")
    assert terms == [Term(-0.25, "cos", 0, -3, "dx"), Term(-1.0, None, 0, 0, "dy")]


@pytest.mark.parametrize(
    "text, pos, expected",
    [
        ("1*dz", 2, "'dx' or 'dy'"),
        ("1 dx", 2, "'*'"),
        ("dx", 0, "a coefficient"),
        ("1*dx +", 6, "a coefficient"),
        ("sin(1.5,0)*dx", 4, "an integer"),
        ("1*dx 2*dy", 5, "'+', '-' or end"),
        ("1*dx & 2", 5, "a number"),
    ],
)
def test_errors_report_position_and_expectation(text, pos, expected):
    with pytest.raises(ParseError) as info:
        parse_torus_expr(text)
    assert info.value.pos == pos
    assert info.value.expected.startswith(expected)
    assert info.value.code == "E_PARSE"


coeff = st.floats(0.001, 1000, allow_nan=False).map(lambda c: float(f"{c:.6g}"))
term = st.tuples(coeff, st.sampled_from([None, "sin", "cos"]), st.integers(-5, 5), st.integers(-5, 5),
                 st.sampled_from(["dx", "dy"]))


@given(st.lists(st.tuples(st.sampled_from([1.0, -1.0]), term), min_size=1, max_size=5))
def test_round_trip(items):
    parts = []
    want = []
    for k, (sign, (c, trig, k1, k2, basis)) in enumerate(items):
        body = f"{c!r}*" + (f"{trig}({k1},{k2})*" if trig else "") + basis
        parts.append(("-" if sign < 0 else ("+" if k else "")) + " " + body)
        want.append(Term(sign * c, trig, k1 if trig else 0, k2 if trig else 0, basis))
    assert parse_torus_expr(" ".join(parts)) == want
