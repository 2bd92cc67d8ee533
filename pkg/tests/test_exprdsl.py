import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finabs.exprdsl import (
    BinOp, Call, DualScalar, EvalError, Neg, Num, ParseError, Pow, Var, evaluate, gradient, parse, to_text,
)
from finabs.geometry import Interval, IntervalError


def test_parse_nonlinear_component():
    e = parse("0.9*x1 + 0.1*sin(x2)", 3)
    assert evaluate(e, [1.0, 0.0, 0.0]) == pytest.approx(0.9)


def test_parse_identity():
    assert parse("x1", 1) == Var(1)


def test_parse_errors():
    with pytest.raises(ParseError) as err:
        parse("2*x3 +", 3)
    assert "end of input" in str(err.value)
    with pytest.raises(ParseError):
        parse("x4", 3)
    with pytest.raises(ParseError):
        parse("tan(x1)", 1)
    with pytest.raises(ParseError):
        parse("min(x1)", 1)
    with pytest.raises(ParseError):
        parse("", 1)


def test_precedence():
    # pow binds tighter than unary minus, which binds tighter than * and +
    assert evaluate(parse("-x1^2", 1), [3.0]) == -9.0
    assert evaluate(parse("1 + 2*x1^2", 1), [2.0]) == 9.0
    assert evaluate(parse("(1 + 2)*x1", 1), [2.0]) == 6.0
    assert evaluate(parse("x1 - x1 - x1", 1), [1.0]) == -1.0
    assert evaluate(parse("pow(x1, 3)", 1), [2.0]) == 8.0
    assert evaluate(parse("x1**-1", 1), [4.0]) == 0.25


def test_scalar_semantics():
    assert evaluate(parse("2*x1", 1), [0.3]) == pytest.approx(0.6)
    assert evaluate(parse("mod1(2*x1)", 1), [0.8]) == pytest.approx(0.6)
    assert evaluate(parse("max(x1, x2) - min(x1, x2)", 2), [1.0, 4.0]) == 3.0
    with pytest.raises(EvalError):
        evaluate(parse("1/x1", 1), [0.0])
    with pytest.raises(EvalError):
        evaluate(parse("log(x1)", 1), [-1.0])


def test_interval_square():
    r = evaluate(parse("x1*x1", 1), [Interval(0.6, 0.8)])
    assert r.lo == pytest.approx(0.36, abs=1e-15) and r.hi == pytest.approx(0.64, abs=1e-15)
    assert r.lo <= 0.36 and r.hi >= 0.64


def test_interval_errors():
    with pytest.raises((EvalError, IntervalError)):
        evaluate(parse("1/x1", 1), [Interval(-1.0, 1.0)])
    with pytest.raises((EvalError, IntervalError)):
        evaluate(parse("log(x1)", 1), [Interval(-1.0, 1.0)])


def test_interval_mod1_flags_piecewise():
    r = evaluate(parse("mod1(2*x1)", 1), [Interval(0.4, 0.6)])
    assert r.lo == 0.0 and r.hi == 1.0 and r.piecewise
    s = evaluate(parse("mod1(2*x1)", 1), [Interval(0.1, 0.2)])
    assert not s.piecewise and s.lo <= 0.2 and s.hi >= 0.4


def test_dual_mod1():
    v, g = gradient(parse("mod1(2*x1)", 1), np.array([0.3]))
    assert float(v) == pytest.approx(0.6) and float(g[0]) == 2.0


def test_dual_tie_conventions():
    _, g = gradient(parse("max(x1, x2)", 2), np.array([1.0, 1.0]))
    assert list(g) == [1.0, 0.0]
    _, g = gradient(parse("abs(x1)", 1), np.array([0.0]))
    assert g[0] == 1.0


# random expression trees for round-trip, soundness and derivative checks

SMOOTH = ["sin", "cos", "exp"]


def trees(n, allow_nonsmooth=True):
    leaves = st.one_of(
        st.builds(Var, st.integers(1, n)),
        st.builds(Num, st.floats(0, 3, allow_nan=False).map(lambda v: round(v, 3))),
    )
    funcs = SMOOTH + (["abs", "mod1"] if allow_nonsmooth else [])

    def extend(children):
        return st.one_of(
            st.builds(BinOp, st.sampled_from(["+", "-", "*"]), children, children),
            st.builds(Neg, children),
            st.builds(Pow, children, st.integers(0, 3)),
            st.builds(lambda f, a: Call(f, (a,)), st.sampled_from(funcs), children),
            st.builds(lambda f, a, b: Call(f, (a, b)), st.sampled_from(["min", "max"] if allow_nonsmooth else ["min"]),
                      children, children) if allow_nonsmooth else children,
        )

    return st.recursive(leaves, extend, max_leaves=8)


@settings(max_examples=300, deadline=None)
@given(trees(3))
def test_print_parse_roundtrip(e):
    text = to_text(e)
    assert parse(text, 3) == e
    assert to_text(parse(text, 3)) == text


@settings(max_examples=150, deadline=None)
@given(trees(2), st.integers(0, 2**31))
def test_interval_soundness_random(e, seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-2, 2, 2)
    hi = lo + rng.uniform(0, 1, 2)
    box = [Interval(lo[i], hi[i]) for i in range(2)]
    try:
        r = evaluate(e, box)
    except (IntervalError, EvalError, OverflowError):
        return
    if not isinstance(r, Interval):
        r = Interval(r, r)
    pts = rng.uniform(lo, hi, (100, 2))
    vals = evaluate(e, [pts[:, 0], pts[:, 1]])
    vals = np.broadcast_to(vals, (100,))
    finite = np.isfinite(vals)
    assert np.all(vals[finite] >= r.lo) and np.all(vals[finite] <= r.hi)


@settings(max_examples=150, deadline=None)
@given(trees(2, allow_nonsmooth=False), st.integers(0, 2**31))
def test_dual_matches_finite_differences(e, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, 2)
    v, g = gradient(e, x)
    h = 1e-6
    for i in range(2):
        dx = np.zeros(2)
        dx[i] = h
        fd = (evaluate(e, list(x + dx)) - evaluate(e, list(x - dx))) / (2 * h)
        fd = float(np.broadcast_to(fd, ()))
        if not math.isfinite(fd) or abs(fd) > 1e6:
            continue
        assert float(g[i]) == pytest.approx(fd, rel=1e-6, abs=1e-6)


def test_dual_scalar_arithmetic():
    x = DualScalar.variable(np.array(2.0), 0, 2)
    y = DualScalar.variable(np.array(3.0), 1, 2)
    z = x * y + x**2 / y
    assert float(z.value) == pytest.approx(6 + 4 / 3)
    assert np.allclose(z.grad, [3 + 4 / 3, 2 - 4 / 9])
