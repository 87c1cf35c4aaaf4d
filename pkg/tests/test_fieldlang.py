import math

import numpy as np
import pytest

from frontspeed.fieldlang import (
    ArityError, BinOp, Call, CoefficientField, DomainError, ExprSyntaxError,
    Neg, NotDifferentiable, Num, UForbidden, UnknownIdentifier, Var,
    VariableOutOfRange, derivative_u, eval_expr, parse_expr,
    validate_periodicity,
)


def test_parse_and_eval_basic():
    e = parse_expr("1 + 0.5*sin(2*pi*x1)", n_vars=1)
    assert eval_expr(e, [0.25]) == pytest.approx(1.5, abs=1e-14)


def test_reaction_vanishes_at_zero():
    e = parse_expr("u*(1-u)", n_vars=1, allow_u=True)
    assert eval_expr(e, [0.73], u=0.0) == 0.0
    assert eval_expr(e, [0.73], u=1.0) == 0.0


def test_variable_out_of_range():
    with pytest.raises(VariableOutOfRange):
        parse_expr("sin(2*pi*x2)", n_vars=1)


def test_power_and_functions():
    assert eval_expr(parse_expr("2^3", 1), [0.0]) == 8.0
    assert eval_expr(parse_expr("exp(0)*cos(0)", 1), [0.0]) == 1.0
    # right associativity and unary minus in the exponent
    assert eval_expr(parse_expr("2^3^2", 1), [0.0]) == 512.0
    assert eval_expr(parse_expr("2^-1", 1), [0.0]) == 0.5
    assert eval_expr(parse_expr("-2^2", 1), [0.0]) == -4.0


def test_division_by_zero():
    e = parse_expr("1/(x1 - x1)", 1)
    with pytest.raises(DomainError):
        eval_expr(e, [3.0])


def test_invalid_powers():
    with pytest.raises(DomainError):
        eval_expr(parse_expr("(x1-x1)^(0-2)", 1), [1.0])
    with pytest.raises(DomainError):
        eval_expr(parse_expr("(0-2)^0.5", 1), [0.0])


def test_vectorized_evaluation_matches_scalar():
    e = parse_expr("1 + 0.5*sin(2*pi*x1)*cos(2*pi*x2)", 2)
    xs = np.linspace(0, 1, 17)
    ys = np.linspace(0, 1, 17)
    vec = e.evaluate((xs, ys))
    for k in range(len(xs)):
        assert vec[k] == pytest.approx(eval_expr(e, [xs[k], ys[k]]), abs=1e-15)


@pytest.mark.parametrize("source,err", [
    ("1 +", ExprSyntaxError),
    ("(1", ExprSyntaxError),
    ("1 2", ExprSyntaxError),
    ("", ExprSyntaxError),
    ("y + 1", UnknownIdentifier),
    ("foo(x1)", UnknownIdentifier),
    ("sin(x1, x1)", ArityError),
    ("min(x1)", ArityError),
])
def test_parse_errors(source, err):
    with pytest.raises(err):
        parse_expr(source, n_vars=2)


def test_syntax_error_carries_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("1 + $", 1)
    assert info.value.offset == 4


def test_u_forbidden_when_not_allowed():
    with pytest.raises(UForbidden):
        parse_expr("u*(1-u)", 1, allow_u=False)


def test_params_inline_numbers_and_expressions():
    e = parse_expr("a*sin(2*pi*x2)", 2, params={"a": 2.0})
    assert eval_expr(e, [0.0, 0.25]) == pytest.approx(2.0, abs=1e-14)
    e2 = parse_expr("m*u", 1, allow_u=True,
                    params={"m": "1+0.5*sin(2*pi*x1)"})
    assert eval_expr(e2, [0.25], u=2.0) == pytest.approx(3.0, abs=1e-14)


def test_param_cycle_is_rejected():
    with pytest.raises(ExprSyntaxError):
        parse_expr("a+1", 1, params={"a": "b", "b": "a"})


def test_derivative_logistic():
    f = parse_expr("u*(1-u)", 1, allow_u=True)
    df = derivative_u(f)
    assert eval_expr(df, [0.3], u=0.0) == pytest.approx(1.0, abs=1e-14)
    assert eval_expr(df, [0.3], u=0.5) == pytest.approx(0.0, abs=1e-14)


def test_derivative_linear_in_u():
    f = parse_expr("m*u", 1, allow_u=True, params={"m": "1+0.5*sin(2*pi*x1)"})
    df = derivative_u(f)
    for x in (0.0, 0.25, 0.8):
        assert eval_expr(df, [x], u=0.37) == pytest.approx(
            1 + 0.5 * math.sin(2 * math.pi * x), abs=1e-14)


def test_derivative_rejects_min_max_abs():
    for src in ("abs(u)", "min(u, 1-u)", "max(0, u-0.3)*(1-u)"):
        with pytest.raises(NotDifferentiable):
            derivative_u(parse_expr(src, 1, allow_u=True))


def test_derivative_rejects_u_in_exponent():
    with pytest.raises(NotDifferentiable):
        derivative_u(parse_expr("2^u", 1, allow_u=True))


@pytest.mark.parametrize("source", [
    "u*(1-u)",
    "u^2*(1-u)",
    "(1+0.5*sin(2*pi*x1))*u*(1-u)",
    "tanh(u)*exp(-u)",
    "u*(1-u)*(u-0.25)",
    "sin(u)/(2+cos(u))",
])
def test_derivative_matches_finite_differences(source):
    f = parse_expr(source, 1, allow_u=True)
    df = derivative_u(f)
    rng = np.random.default_rng(7)
    C = 50.0
    for _ in range(100):
        x = [rng.uniform(0, 1)]
        u = rng.uniform(0.05, 0.95)
        exact = eval_expr(df, x, u=u)
        for h in (1e-3, 1e-4):
            fd = (eval_expr(f, x, u=u + h) - eval_expr(f, x, u=u - h)) / (2 * h)
            assert abs(exact - fd) <= C * h * h


def _random_expr(rng, depth, n_vars, allow_u):
    leaf_choices = ["num", "pi", "var"] + (["u"] if allow_u else [])
    if depth == 0 or rng.random() < 0.3:
        kind = rng.choice(leaf_choices)
        if kind == "num":
            # nonnegative literal: the parser expresses negatives as Neg(Num)
            return Num(float(np.round(rng.uniform(0, 3), 3)))
        if kind == "pi":
            from frontspeed.fieldlang import PiConst
            return PiConst()
        if kind == "var":
            return Var(int(rng.integers(1, n_vars + 1)))
        from frontspeed.fieldlang import UVar
        return UVar()
    kind = rng.choice(["bin", "neg", "call1", "call2"])
    if kind == "neg":
        return Neg(_random_expr(rng, depth - 1, n_vars, allow_u))
    if kind == "call1":
        name = rng.choice(["sin", "cos", "exp", "tanh", "abs"])
        return Call(name, (_random_expr(rng, depth - 1, n_vars, allow_u),))
    if kind == "call2":
        name = rng.choice(["min", "max"])
        return Call(name, (_random_expr(rng, depth - 1, n_vars, allow_u),
                           _random_expr(rng, depth - 1, n_vars, allow_u)))
    op = rng.choice(["+", "-", "*", "/", "^"])
    return BinOp(op, _random_expr(rng, depth - 1, n_vars, allow_u),
                 _random_expr(rng, depth - 1, n_vars, allow_u))


def test_print_parse_round_trip_random():
    rng = np.random.default_rng(123)
    for _ in range(300):
        e = _random_expr(rng, depth=4, n_vars=2, allow_u=True)
        printed = str(e)
        reparsed = parse_expr(printed, n_vars=2, allow_u=True)
        assert reparsed == e, printed


def test_print_parse_round_trip_corpus():
    corpus = [
        "1 + 0.5*sin(2*pi*x1)",
        "u*(1-u)*(u-0.25)",
        "2^-3^2",
        "-(x1+x2)/(1+x1*x2)",
        "max(0, u-0.3)*(1-u)",
    ]
    for src in corpus:
        e = parse_expr(src, 2, allow_u=True)
        assert parse_expr(str(e), 2, allow_u=True) == e


def test_periodicity_validation():
    ok = CoefficientField("scalar", 1,
                          (parse_expr("1+0.5*sin(2*pi*x1)", 1),),
                          declared_periodic=True)
    assert validate_periodicity(ok) <= 1e-10
    bad = CoefficientField("scalar", 1, (parse_expr("x1", 1),),
                           declared_periodic=True)
    with pytest.raises(ValueError):
        validate_periodicity(bad)


def test_matrix_field_symmetric_lookup():
    a11 = parse_expr("2", 2)
    a12 = parse_expr("0.1", 2)
    a22 = parse_expr("1", 2)
    A = CoefficientField("matrix", 2, (a11, a12, a22))
    assert A.entry(0, 1) is A.entry(1, 0)
    assert eval_expr(A.entry(1, 1), [0.0, 0.0]) == 1.0
