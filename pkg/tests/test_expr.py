"""Expression language: parsing, printing, evaluation and errors."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfdelay.expr import (ArityError, Binary, EvaluationError, ExprError, Expression, Num,
                          UnknownIdentifier, Unary, Var, parse_expr)

leaves = st.one_of(
    st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False).map(Num),
    st.sampled_from([Var("t"), Var("s"), Var("x", (1,)), Var("x", (2,)), Var("nu", (1,)),
                     Var("xi", (0, 1)), Var("xi", (1, 2))]),
)


def _extend(children):
    unary = st.tuples(st.sampled_from(["exp", "sin", "cos", "tanh", "abs", "sqrt", "neg"]), children)
    binary = st.tuples(st.sampled_from(["add", "sub", "mul", "div", "pow", "min", "max"]), children, children)
    return st.one_of(
        unary.filter(lambda u: not (u[0] == "neg" and isinstance(u[1], Num))).map(lambda u: Unary(*u)),
        binary.map(lambda b: Binary(*b)),
    )


trees = st.recursive(leaves, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_pretty_then_parse_is_identity(tree):
    text = tree.pretty()
    assert parse_expr(text) == tree
    assert parse_expr(text).pretty() == text


@pytest.mark.parametrize("text, value", [
    ("1 + 2 * 3", 7.0),
    ("2 ^ 3 ^ 2", 512.0),
    ("-2 ^ 2", -4.0),
    ("(1 - 4) / 2", -1.5),
    ("max(1, min(5, 3)) + pow(2, 0.5) ^ 2", 5.0),
    ("pi", math.pi),
    ("1.5e1 - .5", 14.5),
])
def test_precedence_and_literals(text, value):
    assert Expression(text)({}) == pytest.approx(value, rel=1e-15)


def test_vectorised_evaluation_with_indices():
    e = Expression("xi[1][2] - x[1] * nu[1] + t")
    xi = np.array([[[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]]])
    env = {"t": np.array([0.5, 1.0]), "x": xi[:, 0, :], "xi": xi, "nu": np.array([[2.0], [3.0]])}
    np.testing.assert_array_equal(e(env), [4.0 - 2.0 + 0.5, 8.0 - 15.0 + 1.0])


def test_free_vars():
    assert Expression("x[1] + xi[1][1] * s").free_vars() == {("x", (1,)), ("xi", (1, 1)), ("s", ())}


@pytest.mark.parametrize("text, pos", [("1 + ", 4), ("2 * (3", 6), ("1 $ 2", 2), ("x[a]", 2), ("1 2", 2)])
def test_syntax_errors_carry_positions(text, pos):
    with pytest.raises(ExprError) as info:
        parse_expr(text)
    assert info.value.pos == pos
    assert f"position {pos}" in str(info.value)


def test_unknown_identifier_and_arity():
    with pytest.raises(UnknownIdentifier) as info:
        parse_expr("1 + foo")
    assert info.value.pos == 4
    with pytest.raises(ArityError):
        parse_expr("exp(1, 2)")
    with pytest.raises(ArityError):
        parse_expr("pow(2)")
    with pytest.raises(ExprError):
        parse_expr("x[0]")


@pytest.mark.parametrize("text", ["1 / (t - t)", "sqrt(t - 2)", "pow(t - 2, 0.5)", "exp(1000 * t)"])
def test_evaluation_errors(text):
    with pytest.raises(EvaluationError):
        Expression(text)({"t": np.array([1.0])})


def test_integer_powers_are_exact_products():
    e = Expression("x[1]^3")
    v = np.array([[1.1], [-0.7]])
    np.testing.assert_array_equal(e({"x": v}), v[:, 0] * v[:, 0] * v[:, 0])


def test_expression_equality_is_structural():
    assert Expression("1+x[1]") == Expression("(1.0 + x[1])")
    assert Expression("0").is_zero() and not Expression("0 * t").is_zero()
