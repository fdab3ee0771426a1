import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowfast_ldp.errors import (
    ExpressionSyntaxError,
    IndexOutOfRange,
    ModelError,
    ModelEvaluationError,
    UnknownIdentifier,
)
from slowfast_ldp.expr import (
    Add, Call, Div, Exp, Mu, Mul, Neg, Num, Pi, Sub, Z, parse_expression, to_source,
)


def test_tree_shape():
    assert parse_expression("1 + mu[0]*exp(-z)") == Add(Num(1.0), Mul(Mu(0), Exp(Neg(Z()))))


def test_evaluates_sine():
    assert float(parse_expression("2 + sin(2*pi*z)")(np.array([0.5, 0.5]), 0.25)) == pytest.approx(3.0)


def test_index_out_of_range():
    with pytest.raises(IndexOutOfRange):
        parse_expression("mu[7]", q=2)


@pytest.mark.parametrize("src, tree", [
    ("1 - 2 - 3", Sub(Sub(Num(1.0), Num(2.0)), Num(3.0))),
    ("1 - (2 - 3)", Sub(Num(1.0), Sub(Num(2.0), Num(3.0)))),
    ("8 / 4 / 2", Div(Div(Num(8.0), Num(4.0)), Num(2.0))),
    ("-2 * 3", Mul(Neg(Num(2.0)), Num(3.0))),
    ("--z", Neg(Neg(Z()))),
    ("1 + 2 * 3", Add(Num(1.0), Mul(Num(2.0), Num(3.0)))),
    ("max(z, pi)", Call("max", (Z(), Pi()))),
    ("2.5e-3", Num(0.0025)),
])
def test_precedence_and_associativity(src, tree):
    assert parse_expression(src) == tree


@pytest.mark.parametrize("src", ["1 +", "(z", "mu[0", "exp z", "min(z)", "1 2", "z $ 2", ""])
def test_syntax_errors_carry_position(src):
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expression(src)
    assert info.value.position >= 0


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifier):
        parse_expression("tanh(z)")


def test_depth_limit():
    with pytest.raises(ExpressionSyntaxError):
        parse_expression("(" * 80 + "z" + ")" * 80)
    with pytest.raises(ModelError):
        parse_expression("z" * (64 * 1024 + 1))


@pytest.mark.parametrize("src", ["log(z - 1)", "sqrt(-1 - z)", "1 / (z - z)", "exp(1000*z + 1000)"])
def test_domain_errors_are_reported(src):
    with pytest.raises(ModelEvaluationError):
        parse_expression(src)(np.array([1.0, 0.0]), 0.5)


def test_broadcasting_over_replicas():
    e = parse_expression("mu[1] + z")
    mu = np.array([[0.2, 0.8], [0.6, 0.4]])
    np.testing.assert_allclose(e(mu, np.array([0.1, 0.2])), [0.9, 0.6])


leaves = st.one_of(
    st.floats(0, 1e6, allow_nan=False).map(Num),
    st.just(Pi()), st.just(Z()), st.integers(0, 3).map(Mu),
)


def _extend(children):
    binary = st.sampled_from([Add, Sub, Mul, Div])
    unary = st.sampled_from(["exp", "log", "sin", "cos", "sqrt"])
    return st.one_of(
        st.builds(lambda op, l, r: op(l, r), binary, children, children),
        children.map(Neg),
        st.builds(lambda f, a: Call(f, (a,)), unary, children),
        st.builds(lambda f, a, b: Call(f, (a, b)), st.sampled_from(["min", "max"]), children, children),
    )


trees = st.recursive(leaves, _extend, max_leaves=20)


@settings(max_examples=200, deadline=None)
@given(trees)
def test_print_then_parse_round_trips(tree):
    assert parse_expression(to_source(tree)) == tree


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0, 1))
def test_matches_python_arithmetic(m0, z):
    e = parse_expression("mu[0]*exp(-z) + cos(pi*z)/(1 + mu[1])")
    expected = m0 * math.exp(-z) + math.cos(math.pi * z) / (1 + (1 - m0))
    assert float(e(np.array([m0, 1 - m0]), z)) == pytest.approx(expected, rel=1e-14)
