"""Evaluation of expression trees under scalar, interval and dual semantics.

The semantics is picked from the type of the environment entries: floats or
numpy arrays evaluate pointwise (arrays broadcast, so a whole sample batch goes
through in one call), :class:`~finabs.geometry.Interval` gives the natural
interval extension and :class:`DualScalar` gives value plus gradient.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..geometry import Interval, IntervalError
from .ast import BinOp, Call, Expr, Neg, Num, Pow, Var
from .dual import DualScalar, select

TWO_PI = 2.0 * math.pi


class EvalError(ArithmeticError):
    pass


def _down(x):
    return np.nextafter(x, -np.inf)


def _up(x):
    return np.nextafter(x, np.inf)


# --- scalar -----------------------------------------------------------------

def _scalar_div(a, b):
    if np.any(np.asarray(b) == 0):
        raise EvalError("division by zero")
    return a / b


def _scalar_log(a):
    if np.any(np.asarray(a) <= 0):
        raise EvalError("log of a non-positive value")
    return np.log(a)


def _scalar_pow(a, k):
    if k < 0 and np.any(np.asarray(a) == 0):
        raise EvalError("negative power of zero")
    return np.asarray(a, dtype=float) ** k if k < 0 else a**k


_SCALAR = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": _scalar_log,
    "abs": np.abs,
    "mod1": lambda a: a - np.floor(a),
    "min": np.minimum,
    "max": np.maximum,
}


# --- interval ---------------------------------------------------------------

def _iv_sin(a: Interval) -> Interval:
    lo = np.minimum(np.sin(a.lo), np.sin(a.hi))
    hi = np.maximum(np.sin(a.lo), np.sin(a.hi))
    # peaks at pi/2 + 2k pi, troughs at -pi/2 + 2k pi
    k_peak = np.ceil((a.lo - math.pi / 2) / TWO_PI)
    k_trough = np.ceil((a.lo + math.pi / 2) / TWO_PI)
    has_peak = math.pi / 2 + TWO_PI * k_peak <= a.hi
    has_trough = -math.pi / 2 + TWO_PI * k_trough <= a.hi
    wide = a.hi - a.lo >= TWO_PI
    hi = np.where(has_peak | wide, 1.0, _up(hi))
    lo = np.where(has_trough | wide, -1.0, _down(lo))
    return Interval(np.maximum(lo, -1.0)[()], np.minimum(hi, 1.0)[()], a.piecewise)


def _iv_cos(a: Interval) -> Interval:
    lo = np.minimum(np.cos(a.lo), np.cos(a.hi))
    hi = np.maximum(np.cos(a.lo), np.cos(a.hi))
    k_peak = np.ceil(a.lo / TWO_PI)
    k_trough = np.ceil((a.lo - math.pi) / TWO_PI)
    has_peak = TWO_PI * k_peak <= a.hi
    has_trough = math.pi + TWO_PI * k_trough <= a.hi
    wide = a.hi - a.lo >= TWO_PI
    hi = np.where(has_peak | wide, 1.0, _up(hi))
    lo = np.where(has_trough | wide, -1.0, _down(lo))
    return Interval(np.maximum(lo, -1.0)[()], np.minimum(hi, 1.0)[()], a.piecewise)


def _iv_exp(a: Interval) -> Interval:
    return Interval(np.maximum(_down(np.exp(a.lo)), 0.0), _up(np.exp(a.hi)), a.piecewise)


def _iv_log(a: Interval) -> Interval:
    if np.any(np.asarray(a.lo) <= 0):
        raise IntervalError("log of an interval reaching non-positive values")
    return Interval(_down(np.log(a.lo)), _up(np.log(a.hi)), a.piecewise)


def _iv_abs(a: Interval) -> Interval:
    lo = np.where(a.lo >= 0, a.lo, np.where(a.hi <= 0, -a.hi, 0.0))[()]
    hi = np.maximum(np.abs(a.lo), np.abs(a.hi))
    return Interval(lo, hi, a.piecewise)


def _iv_mod1(a: Interval) -> Interval:
    fl, fh = np.floor(a.lo), np.floor(a.hi)
    same = fl == fh
    lo = np.where(same, _down(a.lo - fl), 0.0)
    hi = np.where(same, _up(a.hi - fl), 1.0)
    lo = np.maximum(lo, 0.0)[()]
    hi = np.minimum(hi, 1.0)[()]
    return Interval(lo, hi, a.piecewise or bool(np.any(~same)))


def _iv_min(a, b):
    a, b = Interval._lift(a), Interval._lift(b)
    return Interval(np.minimum(a.lo, b.lo), np.minimum(a.hi, b.hi), a.piecewise or b.piecewise)


def _iv_max(a, b):
    a, b = Interval._lift(a), Interval._lift(b)
    return Interval(np.maximum(a.lo, b.lo), np.maximum(a.hi, b.hi), a.piecewise or b.piecewise)


_INTERVAL = {
    "sin": _iv_sin,
    "cos": _iv_cos,
    "exp": _iv_exp,
    "log": _iv_log,
    "abs": _iv_abs,
    "mod1": _iv_mod1,
    "min": _iv_min,
    "max": _iv_max,
}


# --- dual -------------------------------------------------------------------

def _dual_log(a: DualScalar) -> DualScalar:
    if np.any(a.value <= 0):
        raise EvalError("log of a non-positive value")
    return a.apply(np.log, lambda v: 1.0 / v)


def _dual_min(a, b):
    return select(a.value <= b.value, a, b)


def _dual_max(a, b):
    return select(a.value >= b.value, a, b)


_DUAL = {
    "sin": lambda a: a.apply(np.sin, np.cos),
    "cos": lambda a: a.apply(np.cos, lambda v: -np.sin(v)),
    "exp": lambda a: a.apply(np.exp, np.exp),
    "log": _dual_log,
    # abs = max(x, -x), left branch on ties
    "abs": lambda a: a.apply(np.abs, lambda v: np.where(v >= 0, 1.0, -1.0)),
    # derivative 1 away from the measure-zero breakpoints
    "mod1": lambda a: DualScalar(a.value - np.floor(a.value), a.grad),
    "min": _dual_min,
    "max": _dual_max,
}


def _table(sample):
    if isinstance(sample, Interval):
        return _INTERVAL
    if isinstance(sample, DualScalar):
        return _DUAL
    return _SCALAR


def _lift_for(sample, value):
    if isinstance(sample, DualScalar):
        return DualScalar(value, np.zeros_like(sample.grad))
    if isinstance(sample, Interval):
        return Interval(value, value)
    return value


def evaluate(e: Expr, env: Sequence):
    """Evaluate ``e`` with ``env[i]`` bound to ``x{i+1}``."""
    if not len(env):
        raise ValueError("empty environment")
    sample = env[0]
    table = _table(sample)
    scalar = table is _SCALAR

    def go(node):
        if isinstance(node, Num):
            return _lift_for(sample, node.value)
        if isinstance(node, Var):
            if node.index > len(env):
                raise EvalError(f"x{node.index} not bound (environment has {len(env)} entries)")
            return env[node.index - 1]
        if isinstance(node, Neg):
            return -go(node.operand)
        if isinstance(node, BinOp):
            a, b = go(node.left), go(node.right)
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if scalar:
                return _scalar_div(a, b)
            try:
                return a / b
            except ZeroDivisionError as exc:
                raise EvalError(str(exc)) from exc
        if isinstance(node, Pow):
            a = go(node.base)
            if scalar:
                return _scalar_pow(a, node.exponent)
            try:
                return a**node.exponent
            except ZeroDivisionError as exc:
                raise EvalError(str(exc)) from exc
        if isinstance(node, Call):
            return table[node.name](*(go(a) for a in node.args))
        raise TypeError(f"not an expression node: {node!r}")

    return go(e)


def gradient(e: Expr, x) -> tuple:
    """Value and gradient of ``e`` at point(s) ``x`` (shape ``(n,)`` or ``(n, m)``)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    env = [DualScalar.variable(x[i], i, n) for i in range(n)]
    out = evaluate(e, env)
    if not isinstance(out, DualScalar):  # constant expression
        out = DualScalar(out, np.zeros((n,) + np.shape(x[0])))
    value = np.broadcast_to(out.value, np.shape(x[0]))
    grad = np.broadcast_to(out.grad, (n,) + np.shape(x[0]))
    return value, grad
