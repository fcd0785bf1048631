"""Polynomial algebra and truncated power series.

Polynomials store complex coefficients in ascending degree order so that
shifted polynomials such as ``rho(x_i * x)`` share the code path of real
ones. Power series carry a leading "order" axis and may be batched over any
trailing shape, which is what the Taylor-mode derivative machinery in
:mod:`plmmlab.problems` relies on.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .exceptions import IllConditioned

ROOT_RESIDUAL_TOL = 1e-10
_ANGLE_SNAP = 1e-9


class Polynomial:
    """Immutable polynomial with complex coefficients, lowest degree first."""

    __slots__ = ("_coeffs",)

    def __init__(self, coeffs: Sequence[complex] | np.ndarray):
        c = np.atleast_1d(np.asarray(coeffs, dtype=complex)).copy()
        if c.ndim != 1:
            raise ValueError("coefficients must be a flat sequence")
        nz = np.flatnonzero(c)
        c = c[: nz[-1] + 1] if nz.size else c[:1]
        if c.size == 0:
            c = np.zeros(1, dtype=complex)
        c.setflags(write=False)
        self._coeffs = c

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def degree(self) -> int:
        return self._coeffs.size - 1

    @property
    def is_zero(self) -> bool:
        return self.degree == 0 and self._coeffs[0] == 0

    @property
    def is_real(self) -> bool:
        return bool(np.all(self._coeffs.imag == 0))

    @property
    def real_coeffs(self) -> np.ndarray:
        return self._coeffs.real.copy()

    def __call__(self, x):
        return evaluate(self, x)

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._coeffs.shape == other._coeffs.shape and bool(
            np.all(self._coeffs == other._coeffs)
        )

    def __hash__(self):
        return hash(self._coeffs.tobytes())

    def __repr__(self):
        if self.is_real:
            return f"Polynomial({self._coeffs.real.tolist()})"
        return f"Polynomial({self._coeffs.tolist()})"

    def __add__(self, other: "Polynomial") -> "Polynomial":
        n = max(self._coeffs.size, other._coeffs.size)
        a = np.zeros(n, dtype=complex)
        a[: self._coeffs.size] += self._coeffs
        a[: other._coeffs.size] += other._coeffs
        return Polynomial(a)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + Polynomial(-other._coeffs)

    def __mul__(self, other):
        if isinstance(other, Polynomial):
            return Polynomial(np.convolve(self._coeffs, other._coeffs))
        return Polynomial(self._coeffs * other)

    __rmul__ = __mul__

    def derivative(self, order: int = 1) -> "Polynomial":
        return derivative(self, order)

    def roots(self) -> np.ndarray:
        return roots(self)

    def shifted(self, root: complex) -> "Polynomial":
        """Return the polynomial ``x -> self(root * x)``."""
        powers = root ** np.arange(self._coeffs.size)
        return Polynomial(self._coeffs * powers)

    def padded(self, length: int) -> np.ndarray:
        """Coefficients zero-padded (never truncated) to ``length``."""
        out = np.zeros(max(length, self._coeffs.size), dtype=complex)
        out[: self._coeffs.size] = self._coeffs
        return out

    def euler_derivative(self, order: int, x: complex) -> complex:
        """Evaluate ``(x d/dx)^order`` applied to the polynomial at ``x``.

        This is ``sum_v a_v v**order x**v``, the weight that a shift operator
        polynomial puts on the ``order``-th time derivative of ``x**n u(t_n)``.
        """
        nu = np.arange(self._coeffs.size, dtype=float)
        return complex(np.sum(self._coeffs * nu**order * np.asarray(x, dtype=complex) ** nu))


def evaluate(poly: Polynomial, x):
    """Horner evaluation; ``x`` may be a scalar or an array."""
    c = poly.coeffs
    x = np.asarray(x, dtype=complex)
    acc = np.full(x.shape, c[-1], dtype=complex)
    for a in c[-2::-1]:
        acc = acc * x + a
    if acc.ndim == 0:
        return complex(acc)
    return acc


def derivative(poly: Polynomial, order: int = 1) -> Polynomial:
    if order < 1:
        raise ValueError("order must be >= 1")
    c = poly.coeffs
    if order > poly.degree:
        return Polynomial([0.0])
    k = np.arange(order, c.size)
    falling = np.ones(k.size)
    for i in range(order):
        falling *= k - i
    return Polynomial(c[order:] * falling)


def _sort_key(z: complex):
    ang = math.atan2(z.imag, z.real) % (2 * math.pi)
    if ang > 2 * math.pi - _ANGLE_SNAP or abs(z) < 1e-14:
        ang = 0.0
    return (round(ang, 9), abs(z))


def sort_roots(values) -> np.ndarray:
    """Deterministic order: angle in [0, 2pi), then modulus."""
    return np.array(sorted((complex(v) for v in values), key=_sort_key), dtype=complex)


def roots(poly: Polynomial, tol_residual: float = ROOT_RESIDUAL_TOL) -> np.ndarray:
    """All complex roots with multiplicity, polished by one Newton step.

    Raises
    ------
    IllConditioned
        If a polished root does not meet the relative residual tolerance.
    """
    if poly.degree < 1:
        raise ValueError("roots() needs a polynomial of degree >= 1")
    c = poly.coeffs
    raw = np.roots(c[::-1])
    dpoly = derivative(poly, 1)
    scale = np.max(np.abs(c))
    polished = []
    for z in raw:
        z = complex(z)
        if z != 0:
            d = dpoly(z)
            if abs(d) > 1e-8 * scale:
                step = poly(z) / d
                if abs(step) < 1e-6 * (1 + abs(z)):
                    z = z - step
        res = abs(poly(z))
        if res > tol_residual * (1 + abs(z)) ** poly.degree * scale:
            raise IllConditioned(f"root {z} has residual {res:.3e}")
        polished.append(z)
    out = np.array(polished, dtype=complex)
    if poly.is_real:
        tiny = np.abs(out.imag) < 1e-12 * (1 + np.abs(out))
        out[tiny] = out[tiny].real
    return sort_roots(out)


class PowerSeries:
    """Truncated power series ``sum_k c_k z**k`` for ``k <= order``.

    ``coeffs`` has shape ``(order + 1, *batch)``; every operation is exact up
    to the truncation order and acts independently on each batch entry.
    Mixed orders truncate to the smaller one.
    """

    __array_priority__ = 1000

    def __init__(self, coeffs):
        c = np.asarray(coeffs)
        if c.dtype.kind not in "fc":
            c = c.astype(float)
        if c.ndim == 0:
            c = c[None]
        self.coeffs = c

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def truncation_order(self) -> int:
        return self.order

    @classmethod
    def constant(cls, value, order: int) -> "PowerSeries":
        v = np.asarray(value)
        c = np.zeros((order + 1,) + v.shape, dtype=np.result_type(v, float))
        c[0] = v
        return cls(c)

    @classmethod
    def variable(cls, value, order: int) -> "PowerSeries":
        """The series ``value + z``."""
        s = cls.constant(value, order)
        if order >= 1:
            s.coeffs[1] = 1.0
        return s

    def __getitem__(self, k):
        return self.coeffs[k]

    def truncate(self, order: int) -> "PowerSeries":
        return PowerSeries(self.coeffs[: order + 1].copy())

    def derivatives(self) -> np.ndarray:
        """Taylor coefficients times k!, i.e. the derivatives at z = 0."""
        fact = np.array([math.factorial(k) for k in range(self.order + 1)], dtype=float)
        return self.coeffs * fact.reshape((-1,) + (1,) * (self.coeffs.ndim - 1))

    def d_dz(self) -> "PowerSeries":
        k = np.arange(1, self.order + 1, dtype=float)
        c = self.coeffs[1:] * k.reshape((-1,) + (1,) * (self.coeffs.ndim - 1))
        if c.shape[0] == 0:
            c = np.zeros_like(self.coeffs[:1])
        return PowerSeries(c)

    def _coerce(self, other):
        if isinstance(other, PowerSeries):
            n = min(self.order, other.order) + 1
            return self.coeffs[:n], other.coeffs[:n]
        return self.coeffs, None

    def __neg__(self):
        return PowerSeries(-self.coeffs)

    def __add__(self, other):
        if isinstance(other, PowerSeries):
            a, b = self._coerce(other)
            return PowerSeries(a + b)
        c = self.coeffs.astype(np.result_type(self.coeffs, np.asarray(other)), copy=True)
        c[0] = c[0] + other
        return PowerSeries(c)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, PowerSeries):
            return PowerSeries(self.coeffs * np.asarray(other))
        a, b = self._coerce(other)
        out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
        for k in range(a.shape[0]):
            acc = a[0] * b[k]
            for i in range(1, k + 1):
                acc = acc + a[i] * b[k - i]
            out[k] = acc
        return PowerSeries(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, PowerSeries):
            return PowerSeries(self.coeffs / np.asarray(other))
        a, b = self._coerce(other)
        out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b, float))
        for k in range(a.shape[0]):
            acc = a[k]
            for i in range(1, k + 1):
                acc = acc - b[i] * out[k - i]
            out[k] = acc / b[0]
        return PowerSeries(out)

    def __rtruediv__(self, other):
        return PowerSeries.constant(np.asarray(other) + 0 * self.coeffs[0], self.order) / self

    def __pow__(self, n: int):
        if not isinstance(n, (int, np.integer)) or n < 0:
            raise ValueError("only non-negative integer powers are supported")
        out = PowerSeries.constant(np.ones_like(self.coeffs[0]), self.order)
        for _ in range(n):
            out = out * self
        return out

    def sin_cos(self):
        """Return ``(sin(self), cos(self))`` via the coupled recursion."""
        x = self.coeffs
        s = np.zeros_like(x, dtype=np.result_type(x, float))
        c = np.zeros_like(s)
        s[0] = np.sin(x[0])
        c[0] = np.cos(x[0])
        for k in range(1, x.shape[0]):
            acc_s = 0.0
            acc_c = 0.0
            for j in range(1, k + 1):
                acc_s = acc_s + j * x[j] * c[k - j]
                acc_c = acc_c + j * x[j] * s[k - j]
            s[k] = acc_s / k
            c[k] = -acc_c / k
        return PowerSeries(s), PowerSeries(c)

    def sin(self):
        return self.sin_cos()[0]

    def cos(self):
        return self.sin_cos()[1]

    def exp(self):
        x = self.coeffs
        e = np.zeros_like(x, dtype=np.result_type(x, float))
        e[0] = np.exp(x[0])
        for k in range(1, x.shape[0]):
            acc = 0.0
            for j in range(1, k + 1):
                acc = acc + j * x[j] * e[k - j]
            e[k] = acc / k
        return PowerSeries(e)

    def __repr__(self):
        return f"PowerSeries(order={self.order}, coeffs={self.coeffs!r})"


def sin(x):
    return x.sin() if isinstance(x, PowerSeries) else np.sin(x)


def cos(x):
    return x.cos() if isinstance(x, PowerSeries) else np.cos(x)


def series_compose_exp(poly: Polynomial, J: int) -> PowerSeries:
    """Series of ``z -> poly(exp(z))`` through ``z**J``.

    Coefficient ``k`` is ``sum_v a_v v**k / k!``.
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    a = poly.coeffs
    nu = np.arange(a.size, dtype=float)
    out = np.empty(J + 1, dtype=complex)
    for k in range(J + 1):
        out[k] = np.sum(a * nu**k) / math.factorial(k)
    if poly.is_real:
        out = out.real.copy()
    return PowerSeries(out)
