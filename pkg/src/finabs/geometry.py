"""Intervals, boxes and the Chebyshev quantities used by the distortion code.

Interval endpoints may be floats or numpy arrays of equal shape; the arithmetic
below is written with ``np.minimum``/``np.maximum`` so one code path serves a
single interval and a whole batch of grid cells at once.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


def _down(x):
    return np.nextafter(x, -np.inf)


def _up(x):
    return np.nextafter(x, np.inf)


class IntervalError(ArithmeticError):
    """Raised when an interval operation has no sound finite enclosure."""


@dataclass(frozen=True)
class Interval:
    """Closed interval ``[lo, hi]`` with outward-rounded arithmetic.

    ``piecewise`` is set when the enclosure came from hulling a function across
    a breakpoint (``mod1``), so callers may choose to split instead.
    """

    lo: object
    hi: object
    piecewise: bool = False

    def __post_init__(self):
        if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
            raise ValueError(f"invalid interval: lo > hi ({self.lo}, {self.hi})")

    @classmethod
    def point(cls, x) -> Interval:
        return cls(x, x)

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, x):
        return (self.lo <= x) & (x <= self.hi)

    def _flag(self, other) -> bool:
        return self.piecewise or (isinstance(other, Interval) and other.piecewise)

    @staticmethod
    def _lift(v) -> Interval:
        return v if isinstance(v, Interval) else Interval(v, v)

    def __add__(self, other):
        o = self._lift(other)
        return Interval(_down(self.lo + o.lo), _up(self.hi + o.hi), self._flag(o))

    __radd__ = __add__

    def __neg__(self):
        return Interval(-self.hi, -self.lo, self.piecewise)

    def __sub__(self, other):
        o = self._lift(other)
        return Interval(_down(self.lo - o.hi), _up(self.hi - o.lo), self._flag(o))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        o = self._lift(other)
        p = (self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi)
        lo = np.minimum(np.minimum(p[0], p[1]), np.minimum(p[2], p[3]))
        hi = np.maximum(np.maximum(p[0], p[1]), np.maximum(p[2], p[3]))
        return Interval(_down(lo), _up(hi), self._flag(o))

    __rmul__ = __mul__

    def reciprocal(self) -> Interval:
        if np.any((self.lo <= 0) & (self.hi >= 0)):
            raise IntervalError("division by an interval containing 0")
        return Interval(_down(1.0 / self.hi), _up(1.0 / self.lo), self.piecewise)

    def __truediv__(self, other):
        return self * self._lift(other).reciprocal()

    def __rtruediv__(self, other):
        return self._lift(other) * self.reciprocal()

    def __pow__(self, k: int):
        if int(k) != k:
            raise IntervalError("only integer exponents are supported")
        k = int(k)
        if k == 0:
            one = np.ones_like(np.asarray(self.lo, dtype=float))
            return Interval(one[()], one[()], self.piecewise)
        if k < 0:
            return (self ** (-k)).reciprocal()
        a, b = self.lo ** k, self.hi ** k
        if k % 2:
            return Interval(_down(a), _up(b), self.piecewise)
        straddle = (self.lo <= 0) & (self.hi >= 0)
        # even powers are non-negative, so rounding down never goes below 0
        lo = np.where(straddle, 0.0, np.maximum(_down(np.minimum(a, b)), 0.0))[()]
        return Interval(lo, _up(np.maximum(a, b)), self.piecewise)

    def hull(self, other: Interval) -> Interval:
        return Interval(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi),
                        self._flag(other))

    def intersects(self, other: Interval):
        return (self.lo <= other.hi) & (other.lo <= self.hi)


@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned box, one closed interval per coordinate."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("box needs matching, non-empty lo/hi")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"invalid box: lo > hi in {lo} / {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_bounds(cls, bounds: Sequence[Sequence[float]]) -> BoxRegion:
        return cls(tuple(b[0] for b in bounds), tuple(b[1] for b in bounds))

    @classmethod
    def unit(cls, n: int) -> BoxRegion:
        return cls((0.0,) * n, (1.0,) * n)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    def intervals(self) -> list[Interval]:
        return [Interval(a, b) for a, b in zip(self.lo, self.hi)]

    def vertices(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lo, self.hi))), dtype=float)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= np.asarray(self.lo) - tol) and np.all(x <= np.asarray(self.hi) + tol))

    def clamp(self, x):
        return np.clip(x, self.lo, self.hi)

    def to_list(self) -> list[list[float]]:
        return [[a, b] for a, b in zip(self.lo, self.hi)]


@dataclass(frozen=True)
class ChebyshevData:
    center: np.ndarray
    radius: float


def gamma_half(n: int) -> float:
    """Exact Gamma(1 + n/2) for integer n >= 0, via (double) factorials."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n % 2 == 0:
        return float(math.factorial(n // 2))
    # Gamma(1 + (2k+1)/2) = (2k+1)!! / 2^(k+1) * sqrt(pi)
    k = (n - 1) // 2
    double_fact = math.prod(range(n, 0, -2))
    return double_fact / 2 ** (k + 1) * math.sqrt(math.pi)


def unit_ball_volume(n: int) -> float:
    """Volume of the Euclidean unit ball in R^n."""
    if n < 1:
        raise ValueError("dimension must be >= 1")
    return math.pi ** (n / 2) / gamma_half(n)


def chebyshev_of_box(b: BoxRegion) -> ChebyshevData:
    half = 0.5 * b.widths
    return ChebyshevData(center=b.center, radius=float(np.sqrt(np.sum(half * half))))


def chebyshev_of_union(boxes: Sequence[BoxRegion]) -> ChebyshevData:
    """Enclosing ball of a finite union of boxes.

    Centred at the midpoint of the union's bounding box; radius is the largest
    vertex distance over members. Coincides with the Chebyshev ball whenever
    the union is itself a box, otherwise it is an upper bound on the radius.
    """
    if not boxes:
        raise ValueError("empty union")
    lo = np.min([b.lo for b in boxes], axis=0)
    hi = np.max([b.hi for b in boxes], axis=0)
    center = 0.5 * (lo + hi)
    r2 = max(sup_sq_dist(center, b) for b in boxes)
    return ChebyshevData(center=center, radius=math.sqrt(r2))


def sup_sq_dist(point, b: BoxRegion) -> float:
    """Squared distance from ``point`` to the farthest vertex of ``b``."""
    p = np.asarray(point, dtype=float).reshape(-1)
    if p.size != b.dim:
        raise ValueError(f"dimension mismatch: point {p.size}, box {b.dim}")
    far = np.maximum(np.abs(p - np.asarray(b.lo)), np.abs(p - np.asarray(b.hi)))
    return float(np.sum(far * far))
