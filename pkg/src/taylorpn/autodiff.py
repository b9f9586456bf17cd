"""Forward-mode first and second order automatic differentiation.

A :class:`Dual2` carries a value, its gradient and (optionally) its Hessian
with respect to ``d`` seed variables. Functions to be differentiated should
use the elementary functions exported here (``exp``, ``atan2``, ...); they
fall through to numpy for ordinary floats, so the same model code runs on
plain numbers and on dual numbers.

    >>> gradient(lambda x: x[0] * x[1], [2.0, 3.0])
    array([3., 2.])
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np


class Dual2:
    """Truncated second-order Taylor number.

    ``hess`` is ``None`` in first-order mode, in which case only gradients
    are propagated.
    """

    __slots__ = ("value", "grad", "hess")

    def __init__(self, value, grad, hess=None):
        self.value = float(value)
        self.grad = grad
        self.hess = hess

    # -- construction helpers -------------------------------------------
    def _const(self, c) -> "Dual2":
        h = None if self.hess is None else np.zeros_like(self.hess)
        return Dual2(c, np.zeros_like(self.grad), h)

    def _chain(self, f0, f1, f2) -> "Dual2":
        """Apply a scalar function with value f0, derivative f1, second derivative f2."""
        g = f1 * self.grad
        h = None
        if self.hess is not None:
            h = f1 * self.hess + f2 * np.outer(self.grad, self.grad)
        return Dual2(f0, g, h)

    def _binary(self, other: "Dual2", f0, fu, fv, fuu, fuv, fvv) -> "Dual2":
        g = fu * self.grad + fv * other.grad
        h = None
        if self.hess is not None and other.hess is not None:
            cross = np.outer(self.grad, other.grad)
            h = (
                fu * self.hess
                + fv * other.hess
                + fuu * np.outer(self.grad, self.grad)
                + fvv * np.outer(other.grad, other.grad)
                + fuv * (cross + cross.T)
            )
        return Dual2(f0, g, h)

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual2):
            h = None if self.hess is None or other.hess is None else self.hess + other.hess
            return Dual2(self.value + other.value, self.grad + other.grad, h)
        if isinstance(other, np.ndarray):
            return NotImplemented
        return Dual2(self.value + other, self.grad, self.hess)

    __radd__ = __add__

    def __neg__(self):
        h = None if self.hess is None else -self.hess
        return Dual2(-self.value, -self.grad, h)

    def __pos__(self):
        return self

    def __sub__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual2):
            u, v = self.value, other.value
            return self._binary(other, u * v, v, u, 0.0, 1.0, 0.0)
        if isinstance(other, np.ndarray):
            return NotImplemented
        h = None if self.hess is None else other * self.hess
        return Dual2(self.value * other, other * self.grad, h)

    __rmul__ = __mul__

    def reciprocal(self):
        v = self.value
        return self._chain(1.0 / v, -1.0 / v**2, 2.0 / v**3)

    def __truediv__(self, other):
        if isinstance(other, Dual2):
            return self * other.reciprocal()
        if isinstance(other, np.ndarray):
            return NotImplemented
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, k):
        if isinstance(k, Dual2):
            return exp(k * log(self))
        if isinstance(k, (int, np.integer)):
            k = int(k)
            if k == 0:
                return self._const(1.0)
            if k == 1:
                return self
            v = self.value
            f2 = k * (k - 1) * v ** (k - 2)
            return self._chain(v**k, k * v ** (k - 1), f2)
        v = self.value
        return self._chain(v**k, k * v ** (k - 1), k * (k - 1) * v ** (k - 2))

    def __rpow__(self, base):
        return exp(self * math.log(base))

    def __abs__(self):
        return -self if self.value < 0 else self

    # -- comparisons act on the value -------------------------------------
    def __lt__(self, other):
        return self.value < _val(other)

    def __le__(self, other):
        return self.value <= _val(other)

    def __gt__(self, other):
        return self.value > _val(other)

    def __ge__(self, other):
        return self.value >= _val(other)

    def __repr__(self):
        return f"Dual2({self.value!r}, grad={self.grad!r})"

    # numpy calls these on object arrays (np.exp(arr) -> elem.exp())
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def sin(self):
        return sin(self)

    def cos(self):
        return cos(self)

    def tan(self):
        return tan(self)

    def arctan(self):
        return atan(self)

    def arctan2(self, other):
        return atan2(self, other)


def _val(x):
    return x.value if isinstance(x, Dual2) else x


def value(x):
    """Strip derivative information, elementwise for arrays."""
    if isinstance(x, Dual2):
        return x.value
    if isinstance(x, np.ndarray) and x.dtype == object:
        return np.array([value(e) for e in x.ravel()], dtype=float).reshape(x.shape)
    if isinstance(x, (list, tuple)):
        return np.array([value(e) for e in x], dtype=float)
    return x


def is_dual(x) -> bool:
    if isinstance(x, Dual2):
        return True
    if isinstance(x, np.ndarray):
        return x.dtype == object and any(isinstance(e, Dual2) for e in x.ravel())
    if isinstance(x, (list, tuple)):
        return any(is_dual(e) for e in x)
    return False


def _unary(x, fd, ffloat):
    if isinstance(x, Dual2):
        return x._chain(*fd(x.value))
    if isinstance(x, np.ndarray) and x.dtype == object:
        return np.array([_unary(e, fd, ffloat) for e in x.ravel()], dtype=object).reshape(x.shape)
    return ffloat(x)


def exp(x):
    def d(v):
        e = math.exp(v) if v < 709.0 else math.inf
        return e, e, e

    return _unary(x, d, np.exp)


def log(x):
    def d(v):
        return math.log(v), 1.0 / v, -1.0 / v**2

    return _unary(x, d, np.log)


def sqrt(x):
    def d(v):
        s = math.sqrt(v)
        return s, 0.5 / s, -0.25 / (s * v)

    return _unary(x, d, np.sqrt)


def sin(x):
    def d(v):
        s = math.sin(v)
        return s, math.cos(v), -s

    return _unary(x, d, np.sin)


def cos(x):
    def d(v):
        c = math.cos(v)
        return c, -math.sin(v), -c

    return _unary(x, d, np.cos)


def tan(x):
    def d(v):
        t = math.tan(v)
        s2 = 1.0 + t * t
        return t, s2, 2.0 * t * s2

    return _unary(x, d, np.tan)


def atan(x):
    def d(v):
        q = 1.0 / (1.0 + v * v)
        return math.atan(v), q, -2.0 * v * q * q

    return _unary(x, d, np.arctan)


def atan2(y, x):
    """Quadrant-aware ``atan(y / x)``."""
    if not isinstance(y, Dual2) and not isinstance(x, Dual2):
        return np.arctan2(y, x)
    if not isinstance(y, Dual2):
        y = x._const(y)
    if not isinstance(x, Dual2):
        x = y._const(x)
    u, v = y.value, x.value
    r2 = u * u + v * v
    fu, fv = v / r2, -u / r2
    fuu = -2.0 * u * v / r2**2
    fvv = 2.0 * u * v / r2**2
    fuv = (u * u - v * v) / r2**2
    return y._binary(x, math.atan2(u, v), fu, fv, fuu, fuv, fvv)


def _seed(x, second: bool) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    d = x.size
    eye = np.eye(d)
    out = np.empty(d, dtype=object)
    for i in range(d):
        out[i] = Dual2(x[i], eye[i].copy(), np.zeros((d, d)) if second else None)
    return out


def _components(y, d: int, second: bool):
    """Yield (value, grad, hess) for each output component."""
    items = y if isinstance(y, (list, tuple, np.ndarray)) else [y]
    for e in np.asarray(items, dtype=object).ravel():
        if isinstance(e, Dual2):
            yield e.value, e.grad, e.hess if second else None
        else:
            yield float(e), np.zeros(d), np.zeros((d, d)) if second else None


def gradient(fn: Callable, x) -> np.ndarray:
    """Gradient of a scalar function at ``x``."""
    xs = _seed(x, second=False)
    (_, g, _), = _components(fn(xs), xs.size, second=False)
    return np.array(g, dtype=float)


def value_and_gradient(fn: Callable, x) -> tuple[float, np.ndarray]:
    xs = _seed(x, second=False)
    (v, g, _), = _components(fn(xs), xs.size, second=False)
    return v, np.array(g, dtype=float)


def hessian(fn: Callable, x) -> np.ndarray:
    """Hessian of a scalar function at ``x``; symmetric by construction."""
    xs = _seed(x, second=True)
    (_, _, h), = _components(fn(xs), xs.size, second=True)
    h = np.array(h, dtype=float)
    return 0.5 * (h + h.T)


def value_grad_hessian(fn: Callable, x) -> tuple[float, np.ndarray, np.ndarray]:
    xs = _seed(x, second=True)
    (v, g, h), = _components(fn(xs), xs.size, second=True)
    h = np.array(h, dtype=float)
    return v, np.array(g, dtype=float), 0.5 * (h + h.T)


def jacobian(fn: Callable, x) -> np.ndarray:
    """``q x d`` Jacobian of a vector function; row ``i`` is the gradient of output ``i``."""
    xs = _seed(x, second=False)
    rows = [g for _, g, _ in _components(fn(xs), xs.size, second=False)]
    return np.array(rows, dtype=float).reshape(len(rows), xs.size)


def value_and_jacobian(fn: Callable, x) -> tuple[np.ndarray, np.ndarray]:
    xs = _seed(x, second=False)
    comps = list(_components(fn(xs), xs.size, second=False))
    vals = np.array([v for v, _, _ in comps], dtype=float)
    jac = np.array([g for _, g, _ in comps], dtype=float).reshape(len(comps), xs.size)
    return vals, jac
