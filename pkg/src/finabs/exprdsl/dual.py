"""Forward-mode dual numbers with a full gradient per value.

``grad`` carries the derivative axis first: for a value of shape ``s`` the
gradient has shape ``(n,) + s``, so batches of points broadcast naturally.
"""

from __future__ import annotations

import numpy as np


class DualScalar:
    __slots__ = ("value", "grad")

    def __init__(self, value, grad):
        self.value = np.asarray(value, dtype=float)
        self.grad = np.asarray(grad, dtype=float)

    @classmethod
    def variable(cls, value, index: int, n: int) -> DualScalar:
        """Seed the ``index``-th (0-based) of ``n`` independent variables."""
        value = np.asarray(value, dtype=float)
        grad = np.zeros((n,) + value.shape)
        grad[index] = 1.0
        return cls(value, grad)

    def _lift(self, other) -> DualScalar:
        if isinstance(other, DualScalar):
            return other
        return DualScalar(other, np.zeros_like(self.grad))

    def __add__(self, other):
        o = self._lift(other)
        return DualScalar(self.value + o.value, self.grad + o.grad)

    __radd__ = __add__

    def __neg__(self):
        return DualScalar(-self.value, -self.grad)

    def __sub__(self, other):
        o = self._lift(other)
        return DualScalar(self.value - o.value, self.grad - o.grad)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        o = self._lift(other)
        return DualScalar(self.value * o.value, self.grad * o.value + self.value * o.grad)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        if np.any(o.value == 0):
            raise ZeroDivisionError("dual division by zero")
        q = self.value / o.value
        return DualScalar(q, (self.grad - q * o.grad) / o.value)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, k: int):
        k = int(k)
        if k == 0:
            return DualScalar(np.ones_like(self.value), np.zeros_like(self.grad))
        if k < 0 and np.any(self.value == 0):
            raise ZeroDivisionError("negative power of zero")
        return DualScalar(self.value**k, k * self.value ** (k - 1) * self.grad)

    def apply(self, f, df) -> DualScalar:
        return DualScalar(f(self.value), df(self.value) * self.grad)

    def __repr__(self):
        return f"DualScalar({self.value!r}, {self.grad!r})"


def select(take_left, a: DualScalar, b: DualScalar) -> DualScalar:
    return DualScalar(np.where(take_left, a.value, b.value),
                      np.where(take_left, a.grad, b.grad))
