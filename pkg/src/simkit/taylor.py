"""Exact higher-order time derivatives along the flow.

The state is propagated as a truncated Taylor polynomial ``z(t) = sum z_k t^k``
through the model's vector field.  Because ``dz/dt = S(z)``, the coefficient
recurrence ``(k+1) z_{k+1} = [S(z(t))]_k`` yields every coefficient exactly
(up to rounding), and ``d^k z/dt^k = k! z_k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ModelError


class Jet:
    """Truncated power series ``c[0] + c[1] t + ... + c[L-1] t^(L-1)``."""

    __slots__ = ("c",)
    __array_priority__ = 1000

    def __init__(self, coefficients):
        self.c = np.asarray(coefficients, dtype=float)

    def __len__(self):
        return len(self.c)

    def coef(self, k):
        return float(self.c[k]) if k < len(self.c) else 0.0

    def _lift(self, other):
        if isinstance(other, Jet):
            return other
        out = np.zeros(len(self.c))
        out[0] = other
        return Jet(out)

    def _trim(self, other):
        L = min(len(self.c), len(other.c))
        return self.c[:L], other.c[:L]

    def __add__(self, other):
        a, b = self._trim(self._lift(other))
        return Jet(a + b)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c)

    def __pos__(self):
        return self

    def __sub__(self, other):
        a, b = self._trim(self._lift(other))
        return Jet(a - b)

    def __rsub__(self, other):
        a, b = self._trim(self._lift(other))
        return Jet(b - a)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c * float(other))
        a, b = self._trim(other)
        return Jet(np.convolve(a, b)[: len(a)])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c / float(other))
        a, b = self._trim(other)
        if b[0] == 0.0:
            raise ZeroDivisionError("jet division by a series with zero constant term")
        q = np.zeros(len(a))
        for k in range(len(a)):
            q[k] = (a[k] - np.dot(q[:k], b[k:0:-1])) / b[0]
        return Jet(q)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, p):
        if int(p) != p or p < 0:
            raise ModelError("jets support non-negative integer powers only")
        out = self._lift(1.0)
        for _ in range(int(p)):
            out = out * self
        return out

    def __repr__(self):
        return f"Jet({self.c.tolist()})"


def _coefficient(value, k):
    if isinstance(value, Jet):
        return value.coef(k)
    return float(value) if k == 0 else 0.0


@dataclass(frozen=True)
class DerivativeStack:
    """``derivatives[k-1]`` holds ``d^k z / dt^k`` at ``z``."""

    z: np.ndarray
    derivatives: tuple

    @property
    def order(self):
        return len(self.derivatives)

    def __getitem__(self, k):
        if not 1 <= k <= len(self.derivatives):
            raise IndexError(f"derivative order {k} outside 1..{len(self.derivatives)}")
        return self.derivatives[k - 1]

    def matrix(self, kmax=None):
        kmax = self.order if kmax is None else kmax
        return np.column_stack(self.derivatives[:kmax])


def taylor_coefficients(model, z, m):
    """Normalized Taylor coefficients ``z_0 .. z_m`` of the flow through ``z``."""
    if m < 1:
        raise ModelError(f"derivative order must be >= 1, got {m}")
    z = np.asarray(z, dtype=float)
    n = model.n
    coeffs = np.zeros((m + 1, n))
    coeffs[0] = z
    for k in range(m):
        jets = [Jet(coeffs[: k + 1, i]) for i in range(n)]
        try:
            s = model.rhs(jets)
        except TypeError as exc:
            raise ModelError(
                f"rhs of model {model.name!r} is not composable over jets; "
                "write it with scalar arithmetic on z[i]") from exc
        coeffs[k + 1] = [_coefficient(s_i, k) / (k + 1) for s_i in s]
    return coeffs


def time_derivatives(model, z, m):
    """Return the :class:`DerivativeStack` of orders ``1..m`` at state ``z``."""
    coeffs = taylor_coefficients(model, z, m)
    ders = tuple(coeffs[k] * math.factorial(k) for k in range(1, m + 1))
    return DerivativeStack(np.asarray(z, dtype=float), ders)


def second_derivative(model, z):
    """``J_S(z) S(z)``, the acceleration of the flow."""
    return model.J(z) @ model.S(z)


def flow_curvature_det(model, z):
    """Determinant of ``[dz/dt, d^2z/dt^2, ..., d^nz/dt^n]``."""
    if model.n < 2:
        raise ModelError("flow curvature needs n >= 2")
    return float(np.linalg.det(time_derivatives(model, z, model.n).matrix()))


def linear_power_diagonal(gamma, m):
    """Diagonal entry of ``A^m`` for the 2-D linear model, from its spectrum."""
    return ((-1.0) ** m + (-1.0 - gamma) ** m) / 2.0


def linear_matrix_power(gamma, m):
    """``A^m`` for the 2-D linear model in closed form."""
    d = linear_power_diagonal(gamma, m)
    off = (-1.0) ** m - d
    return np.array([[d, off], [off, d]])
