"""Arithmetic expression language for declaring dynamics ``x+ = f(x)``."""

from .ast import BinOp, Call, Expr, Neg, Num, Pow, Var, to_text
from .dual import DualScalar
from .evaluate import EvalError, evaluate, gradient
from .parser import ParseError, parse

__all__ = [
    "BinOp",
    "Call",
    "DualScalar",
    "EvalError",
    "Expr",
    "Neg",
    "Num",
    "ParseError",
    "Pow",
    "Var",
    "evaluate",
    "gradient",
    "parse",
    "to_text",
]
