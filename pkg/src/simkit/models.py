"""Kinetic ODE models, reaction-progress-variable specs and feasibility sets.

A model's right-hand side is written with plain scalar arithmetic on the
components of ``z`` (``z[0]``, ``z[1]``, ...) and returns a sequence.  The
same function is then evaluated on floats, on numpy arrays and on the
truncated Taylor series of :mod:`simkit.taylor`, which is how exact time
derivatives are obtained without symbolic algebra.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ModelError

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Polyhedron:
    """Closed set ``{z : A z <= b}``."""

    A: np.ndarray
    b: np.ndarray
    slack: float = 1e-10

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise ModelError("polyhedron needs one offset per row")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_lines(cls, n1, b1, n2, b2, slack=1e-10):
        """Positive quadrant cut by ``z1 <= n1 z2 + b1`` and ``z1 <= n2 z2 + b2``."""
        A = [[-1.0, 0.0], [0.0, -1.0], [1.0, -n1], [1.0, -n2]]
        return cls(np.array(A), np.array([0.0, 0.0, b1, b2]), slack)

    def violation(self, z):
        """Row-wise ``A z - b``; positive entries are violated rows."""
        return self.A @ np.asarray(z, dtype=float) - self.b

    def contains(self, z, slack=None):
        slack = self.slack if slack is None else slack
        return bool(np.all(self.violation(z) <= slack))


@dataclass(frozen=True)
class AnalyticBundle:
    """Closed-form facts about a model.

    ``sim_map`` maps the values of ``sim_rpv`` (zero-based indices) to the
    remaining components; ``sim_residual`` vanishes exactly on the SIM.
    """

    solution: Callable[[np.ndarray, float], np.ndarray]
    fit_constants: Callable[[np.ndarray, float], np.ndarray]
    sim_rpv: tuple
    sim_map: Callable[[np.ndarray], np.ndarray]
    sim_residual: Callable[[np.ndarray], np.ndarray]
    equilibrium: np.ndarray


def _jacobian_by_jets(rhs, n):
    from .taylor import Jet, _coefficient

    def jac(z):
        z = np.asarray(z, dtype=float)
        out = np.empty((n, n))
        for i in range(n):
            args = [Jet([z[j], 1.0 if j == i else 0.0]) for j in range(n)]
            col = rhs(args)
            out[:, i] = [_coefficient(c, 1) for c in col]
        return out

    return jac


@dataclass(frozen=True)
class KineticModel:
    """Autonomous system ``dz/dt = S(z)``.

    Parameters
    ----------
    n : int
        State dimension.
    rhs : callable
        Scalar-arithmetic vector field, see module docstring.
    jacobian : callable, optional
        ``z -> (n, n)`` array.  Derived by forward-mode jets when omitted.
    matrix : ndarray, optional
        System matrix of a linear model; enables closed-form cross-checks.
    """

    n: int
    rhs: Callable[[Sequence], Sequence]
    name: str = "custom"
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    analytic: Optional[AnalyticBundle] = None
    feasible_set: Optional[Polyhedron] = None
    matrix: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.jacobian is None:
            object.__setattr__(self, "jacobian", _jacobian_by_jets(self.rhs, self.n))

    def S(self, z):
        if self.matrix is not None:
            return self.matrix @ np.asarray(z, dtype=float)
        return np.asarray(self.rhs(np.asarray(z, dtype=float)), dtype=float)

    def J(self, z):
        return np.asarray(self.jacobian(np.asarray(z, dtype=float)), dtype=float)

    @property
    def equilibrium(self):
        if self.analytic is None:
            return None
        return self.analytic.equilibrium

    def with_feasible_set(self, poly):
        return KineticModel(self.n, self.rhs, self.name, self.jacobian, self.analytic,
                            poly, self.matrix, dict(self.params))


@dataclass(frozen=True)
class RpvSpec:
    """Fixed reaction progress variables (zero-based ``fixed_indices``)."""

    fixed_indices: tuple
    fixed_values: tuple
    t_star: float = 0.0
    horizon_t0: Optional[float] = None

    def __post_init__(self):
        idx = tuple(int(i) for i in np.atleast_1d(self.fixed_indices))
        vals = tuple(float(v) for v in np.atleast_1d(self.fixed_values))
        if not idx:
            raise ModelError("at least one RPV is required")
        if len(set(idx)) != len(idx) or len(vals) != len(idx):
            raise ModelError("RPV indices must be unique with one value each")
        if min(idx) < 0:
            raise ModelError("RPV indices are zero-based and non-negative")
        if self.horizon_t0 is not None and not self.horizon_t0 < self.t_star:
            raise ModelError(f"horizon t0={self.horizon_t0} must precede t*={self.t_star}")
        object.__setattr__(self, "fixed_indices", idx)
        object.__setattr__(self, "fixed_values", vals)

    def free_indices(self, n):
        if max(self.fixed_indices) >= n or len(self.fixed_indices) >= n:
            raise ModelError(f"RPV set {self.fixed_indices} leaves no free component in n={n}")
        return tuple(i for i in range(n) if i not in self.fixed_indices)

    def assemble(self, n, free_values):
        """Full state with free components ``free_values`` and RPVs fixed."""
        z = np.empty(n)
        z[list(self.free_indices(n))] = free_values
        z[list(self.fixed_indices)] = self.fixed_values
        return z

    def with_horizon(self, t0):
        return RpvSpec(self.fixed_indices, self.fixed_values, self.t_star, t0)


def _linear_jacobian(A):
    return lambda z: A


def make_linear2d(gamma):
    """Symmetric 2-D linear model with eigenvalues -1 (slow) and -1-gamma."""
    if not gamma > 0:
        raise ModelError(f"linear2d needs gamma > 0, got {gamma}")
    g = float(gamma)
    a, b = -1.0 - g / 2.0, g / 2.0
    A = np.array([[a, b], [b, a]])

    def rhs(z):
        return [a * z[0] + b * z[1], b * z[0] + a * z[1]]

    def solution(c, t):
        s, f = c[0] * math.exp(-t), c[1] * math.exp((-1.0 - g) * t)
        return np.array([s + f, s - f])

    def fit(z, t):
        return np.array([(z[0] + z[1]) * math.exp(t) / 2.0,
                         (z[0] - z[1]) * math.exp((1.0 + g) * t) / 2.0])

    bundle = AnalyticBundle(
        solution=solution,
        fit_constants=fit,
        sim_rpv=(1,),
        sim_map=lambda v: np.array([v[0]]),
        sim_residual=lambda z: np.array([z[0] - z[1]]),
        equilibrium=np.zeros(2),
    )
    return KineticModel(2, rhs, "linear2d", _linear_jacobian(A), bundle, matrix=A,
                        params={"gamma": g})


def make_davis_skodje(gamma):
    """Davis-Skodje model; SIM ``z2 = z1 / (1 + z1)``."""
    if not gamma > 1:
        raise ModelError(f"Davis-Skodje needs gamma > 1, got {gamma}")
    g = float(gamma)

    def rhs(z):
        z1, z2 = z[0], z[1]
        return [-z1, -g * z2 + ((g - 1.0) * z1 + g * z1 * z1) / ((1.0 + z1) * (1.0 + z1))]

    def jac(z):
        z1 = z[0]
        d = ((g - 1.0) + 2.0 * g * z1) / (1.0 + z1) ** 2 \
            - 2.0 * ((g - 1.0) * z1 + g * z1 * z1) / (1.0 + z1) ** 3
        return np.array([[-1.0, 0.0], [d, -g]])

    def solution(c, t):
        return np.array([c[0] * math.exp(-t),
                         c[1] * math.exp(-g * t) + c[0] / (c[0] + math.exp(t))])

    def fit(z, t):
        c1 = z[0] * math.exp(t)
        return np.array([c1, math.exp(g * t) * (z[1] - c1 / (c1 + math.exp(t)))])

    bundle = AnalyticBundle(
        solution=solution,
        fit_constants=fit,
        sim_rpv=(0,),
        sim_map=lambda v: np.array([v[0] / (v[0] + 1.0)]),
        sim_residual=lambda z: np.array([z[1] - z[0] / (z[0] + 1.0)]),
        equilibrium=np.zeros(2),
    )
    return KineticModel(2, rhs, "davis_skodje", jac, bundle, params={"gamma": g})


def make_linear3d(gamma1, gamma2):
    """3-D linear model with eigenvalues -1, -1-gamma1, -1-gamma2.

    Its two-dimensional invariant plane without the ``gamma1`` mode is
    ``z2 = (z1 + z3) / sqrt(2)``.
    """
    if not (gamma1 > 0 and gamma2 > 0):
        raise ModelError(f"linear3d needs positive gammas, got {gamma1}, {gamma2}")
    g1, g2 = float(gamma1), float(gamma2)
    r = SQRT2 * g1 / 4.0
    A = np.array([
        [-1.0 - g1 / 4.0 - g2 / 2.0, r, g2 / 2.0 - g1 / 4.0],
        [r, -1.0 - g1 / 2.0, r],
        [g2 / 2.0 - g1 / 4.0, r, -1.0 - g1 / 4.0 - g2 / 2.0],
    ])

    def rhs(z):
        return [A[0, 0] * z[0] + A[0, 1] * z[1] + A[0, 2] * z[2],
                A[1, 0] * z[0] + A[1, 1] * z[1] + A[1, 2] * z[2],
                A[2, 0] * z[0] + A[2, 1] * z[1] + A[2, 2] * z[2]]

    def solution(c, t):
        e0 = c[0] * math.exp(-t)
        e1 = c[1] * math.exp((-1.0 - g1) * t)
        e2 = c[2] * math.exp((-1.0 - g2) * t)
        return np.array([e0 + e1 + e2, SQRT2 * (e0 - e1), e0 + e1 - e2])

    def fit(z, t):
        half_sum, scaled = (z[0] + z[2]) / 2.0, z[1] / SQRT2
        return np.array([(half_sum + scaled) / 2.0 * math.exp(t),
                         (half_sum - scaled) / 2.0 * math.exp((1.0 + g1) * t),
                         (z[0] - z[2]) / 2.0 * math.exp((1.0 + g2) * t)])

    bundle = AnalyticBundle(
        solution=solution,
        fit_constants=fit,
        sim_rpv=(0, 2),
        sim_map=lambda v: np.array([(v[0] + v[1]) / SQRT2]),
        sim_residual=lambda z: np.array([z[1] - (z[0] + z[2]) / SQRT2]),
        equilibrium=np.zeros(3),
    )
    return KineticModel(3, rhs, "linear3d", _linear_jacobian(A), bundle, matrix=A,
                        params={"gamma1": g1, "gamma2": g2})


MODEL_FACTORIES = {
    "linear2d": (make_linear2d, ("gamma",)),
    "davis_skodje": (make_davis_skodje, ("gamma",)),
    "linear3d": (make_linear3d, ("gamma1", "gamma2")),
}


def make_model(name, **params):
    """Build a built-in model by name (``linear2d``, ``davis_skodje``, ``linear3d``)."""
    key = name.replace("-", "_").lower()
    if key in ("ds", "davisskodje"):
        key = "davis_skodje"
    try:
        factory, names = MODEL_FACTORIES[key]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; choose from {sorted(MODEL_FACTORIES)}")
    missing = [p for p in names if p not in params]
    if missing:
        raise ModelError(f"model {key} needs parameters {missing}")
    return factory(*(float(params[p]) for p in names))
