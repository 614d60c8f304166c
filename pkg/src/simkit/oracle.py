"""Closed-form reference values for the 2-D test models.

Every function here uses elementary functions only and is independent of
the numerical machinery.  Expressions are normalized by their dominant
exponential (written in terms of the horizon ``T = t_f - t0 > 0``) so that
long horizons such as ``t0 = -100`` do not overflow; the tests compare the
normalized forms against direct high-precision transcriptions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .taylor import linear_power_diagonal


@dataclass(frozen=True)
class OracleValue:
    value: float
    formula_id: str
    inputs: dict

    def __float__(self):
        return float(self.value)


def _horizon(t0, t_f):
    T = t_f - t0
    if not T > 0:
        raise ValueError(f"need t0 < t_f, got t0={t0}, t_f={t_f}")
    return T


def linear_bvp_poi(gamma, t0, t_f, K, z2_tf):
    """Free component ``z1(t_f)`` of the linear-model boundary value problem

    with ``z1(t0) = K`` and ``z2(t_f) = z2_tf``.
    """
    T = _horizon(t0, t_f)
    eg = math.exp(-gamma * T)
    value = z2_tf + 2.0 * (K * math.exp(-(1.0 + gamma) * T) - z2_tf * eg) / (1.0 + eg)
    return OracleValue(value, "linear_bvp_poi",
                       dict(gamma=gamma, t0=t0, t_f=t_f, K=K, z2_tf=z2_tf))


def ds_bvp_poi(gamma, t0, t_f, K, z1_tf):
    """Free component ``z2(t_f)`` of the Davis-Skodje boundary value problem."""
    T = _horizon(t0, t_f)
    eg = math.exp(-gamma * T)
    value = z1_tf / (z1_tf + 1.0) + K * eg - z1_tf * eg / (z1_tf + math.exp(-T))
    return OracleValue(value, "ds_bvp_poi",
                       dict(gamma=gamma, t0=t0, t_f=t_f, K=K, z1_tf=z1_tf))


def opt_xi(gamma, m):
    """``(-1 - gamma)^(2m - 1)``, the weight of the fast mode in the optimum."""
    return (-1.0 - gamma) ** (2 * m - 1)


def linear_opt_poi(gamma, m, t0, t_f, z2_tf):
    """``z1(t_f)`` minimizing the integrated squared m-th derivative norm."""
    T = _horizon(t0, t_f)
    xi = opt_xi(gamma, m)
    e1 = math.exp(-2.0 * gamma * T)
    em = math.expm1(-2.0 * T)                    # e^{-2T} - 1
    e2m = math.expm1(-2.0 * (1.0 + gamma) * T)   # e^{-2(1+g)T} - 1
    num = 2.0 * e1 * em
    den = -e1 * em + xi * e2m
    value = z2_tf * (1.0 + num / den) if math.isfinite(den) else z2_tf
    return OracleValue(value, "linear_opt_poi",
                       dict(gamma=gamma, m=m, t0=t0, t_f=t_f, z2_tf=z2_tf))


def zdp_nonlocal_linear_poi(gamma, m, t0, t_f, z2_tf):
    """``z1(t_f)`` when the m-th derivative of ``z1`` vanishes at ``t0``."""
    T = _horizon(t0, t_f)
    eg = math.exp(-gamma * T)
    sign = (-1.0) ** m
    value = z2_tf * (1.0 - 2.0 * sign * eg / (sign * eg + (-1.0 - gamma) ** m))
    return OracleValue(value, "zdp_nonlocal_linear_poi",
                       dict(gamma=gamma, m=m, t0=t0, t_f=t_f, z2_tf=z2_tf))


def zdp_local_linear_poi(gamma, m, z2):
    """``z1`` annulling ``d^m z1/dt^m`` at the anchor point of the linear model."""
    d = linear_power_diagonal(gamma, m)
    return OracleValue((d - (-1.0) ** m) * z2 / d, "zdp_local_linear_poi",
                       dict(gamma=gamma, m=m, z2=z2))


def ds_qssa_poi(gamma, z1):
    """``z2`` with ``dz2/dt = 0`` in the Davis-Skodje model."""
    value = ((gamma - 1.0) * z1 + gamma * z1 * z1) / (gamma * (1.0 + z1) ** 2)
    return OracleValue(value, "ds_qssa_poi", dict(gamma=gamma, z1=z1))


def ds_fet_point(gamma, z1):
    """``(z2, dz2/dz1)`` of the truncated functional equation for Davis-Skodje.

    The truncated equation is linear in the slope for this model.
    """
    num = (gamma - 1.0) * z1 + gamma * z1 * z1
    dnum = (gamma - 1.0) + 2.0 * gamma * z1
    dS2 = dnum / (1.0 + z1) ** 2 - 2.0 * num / (1.0 + z1) ** 3
    slope = dS2 / (gamma - 1.0)
    z2 = (num / (1.0 + z1) ** 2 + slope * z1) / gamma
    return z2, slope


def linear_local_opt_poi(gamma, m, z2):
    """``z1`` minimizing ``||d^m z/dt^m||^2`` at the anchor point (zero horizon)."""
    xi = (1.0 + gamma) ** (2 * m)
    return OracleValue(z2 - 2.0 * z2 / (1.0 + xi), "linear_local_opt_poi",
                       dict(gamma=gamma, m=m, z2=z2))


@dataclass(frozen=True)
class LinearAdjointConstants:
    """Amplitudes of the optimal primal/costate pair for the 2-D linear model.

    ``z = c1 e^{-t} (1, 1) + c2 e^{-(1+g)t} (1, -1)`` and
    ``lam = (c3 e^t + c1 e^{-t}) (1, 1) + (c4 e^{(1+g)t} + xi c2 e^{-(1+g)t}) (1, -1)``.
    """

    gamma: float
    m: int
    c1: float
    c2: float
    c3: float
    c4: float
    xi: float
    d_m: float
    chi: float

    def z(self, t):
        g = self.gamma
        s, f = self.c1 * math.exp(-t), self.c2 * math.exp(-(1.0 + g) * t)
        return (s + f, s - f)

    def lam(self, t):
        g = self.gamma
        s = self.c3 * math.exp(t) + self.c1 * math.exp(-t)
        f = self.c4 * math.exp((1.0 + g) * t) + self.xi * self.c2 * math.exp(-(1.0 + g) * t)
        return (s + f, s - f)

    @property
    def hamiltonian(self):
        return hamiltonian_value(self)


def linear_adjoint_constants(gamma, m, t0, t_f, z2_tf):
    """Constants ``c1..c4`` of the primal-dual boundary value problem."""
    _horizon(t0, t_f)
    g = gamma
    e = math.exp
    d_m = linear_power_diagonal(g, m)
    xi = (2.0 * d_m - (-1.0) ** m) ** 2 / (1.0 + g)
    den = xi * e((-1 - g) * 2 * t0) - e((-1 - g) * 2 * t_f) * (xi + 1) \
        + e(-2 * g * t_f) * e(-2 * t0)
    c1 = z2_tf * xi * (e(t_f) * e((-1 - g) * 2 * t0) - e((-1 - 2 * g) * t_f)) / den
    c2 = z2_tf * (e((-1 - g) * t_f) - e((1 - g) * t_f) * e(-2 * t0)) / den
    den34 = den * (e(g * t_f) - e(g * t0))
    c3 = z2_tf * xi * (e(t_f) * e((-4 - g) * t0) + e((-1 - g) * t_f) * e(-2 * t0)
                       - e((1 + g) * t_f) * e((-2 - g) * 2 * t0)
                       - e((-1 - 2 * g) * t_f) * e((-2 + g) * t0)) / den34
    c4 = z2_tf * xi * (e(t_f) * e((-2 - g) * 2 * t0) - e(-t_f) * e((-1 - g) * 2 * t0)
                       + e((-1 - g) * t_f) * e((-2 - g) * t0)
                       - e((1 - g) * t_f) * e((-4 - g) * t0)) / den34
    chi = (2 * e((-1 - g) * 2 * t_f) - 2 * e(-2 * g * t_f) * e(-2 * t0)) \
        / (e(-2 * g * t_f) * e(-2 * t0) + xi * e((-1 - g) * 2 * t0)
           - (xi + 1) * e((-1 - g) * 2 * t_f))
    return LinearAdjointConstants(g, m, c1, c2, c3, c4, xi, d_m, chi)


def hamiltonian_value(constants):
    """``-2 c1 c3 - 2 c2 c4 (1 + gamma)``."""
    c = constants
    return -2.0 * c.c1 * c.c3 - 2.0 * c.c2 * c.c4 * (1.0 + c.gamma)


def adjoint_poi(gamma, m, t0, t_f, z2_tf):
    """``z2_tf (1 + chi)``, the free POI component of the primal-dual problem."""
    c = linear_adjoint_constants(gamma, m, t0, t_f, z2_tf)
    return OracleValue(z2_tf * (1.0 + c.chi), "adjoint_poi",
                       dict(gamma=gamma, m=m, t0=t0, t_f=t_f, z2_tf=z2_tf))
