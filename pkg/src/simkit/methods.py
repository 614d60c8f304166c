"""Species reconstruction: points of interest on slow invariant manifolds.

Each method takes a :class:`~simkit.models.KineticModel` and an
:class:`~simkit.models.RpvSpec` and returns a :class:`Poi` whose fixed
components equal the requested RPV values exactly.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from .errors import ConvergenceError, IntegrationError, ModelError
from .models import Polyhedron, RpvSpec
from .solvers import (IvpOptions, integrate, minimize, newton_solve, shoot_frozen)
from .taylor import flow_curvature_det, time_derivatives

Coefficient = Union[float, Callable[[np.ndarray], float]]


@dataclass
class Poi:
    """Reconstructed state at the anchor time plus solver diagnostics."""

    state: np.ndarray
    method: str
    rpv: RpvSpec
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def free(self):
        return self.state[list(self.rpv.free_indices(len(self.state)))]

    def __getitem__(self, i):
        return self.state[i]


@dataclass(frozen=True)
class MethodConfig:
    """Options shared by the reconstruction methods.

    ``objective`` is ``"derivative"`` (squared norm of the m-th time
    derivative) or ``"lagrangian"`` (``k1 ||dz/dt||^2 - k2 ||z||^2``, where
    ``k1``/``k2`` may be constants or functions of the state).
    ``evaluation`` selects the integral over ``[t0, t_f]`` or the value at
    ``t0`` only.
    """

    m: int = 2
    mode: str = "reverse"
    objective: str = "derivative"
    evaluation: str = "integral"
    k1: Coefficient = 1.0
    k2: Coefficient = 1.0
    K: Optional[tuple] = None
    initial_guess: object = "qssa"
    ivp: IvpOptions = IvpOptions()
    tol: float = 1e-10
    adjoint_gradient: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ModelError(f"derivative order must be >= 1, got {self.m}")
        if self.mode not in ("local", "reverse"):
            raise ModelError(f"mode must be 'local' or 'reverse', got {self.mode!r}")
        if self.objective not in ("derivative", "lagrangian"):
            raise ModelError(f"unknown objective {self.objective!r}")
        if self.evaluation not in ("integral", "endpoint"):
            raise ModelError(f"unknown evaluation {self.evaluation!r}")


@dataclass(frozen=True)
class Objective:
    """Integrand ``phi(z)`` with an optional exact gradient."""

    name: str
    phi: Callable[[np.ndarray], float]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None


def derivative_objective(model, m):
    """``phi(z) = ||d^m z/dt^m||^2``; exact gradient for linear models."""
    if model.matrix is not None:
        Am = np.linalg.matrix_power(model.matrix, m)
        Q = Am.T @ Am
        G = 2.0 * Q
        return Objective(f"deriv{m}", lambda z: float(z @ Q @ z), lambda z: G @ z)
    if m == 1:
        return Objective("deriv1", lambda z: float(model.S(z) @ model.S(z)),
                         lambda z: 2.0 * model.J(z).T @ model.S(z))
    if m == 2:
        def phi(z):
            a = model.J(z) @ model.S(z)
            return float(a @ a)
        return Objective("deriv2", phi)
    def phi_m(z):
        d = time_derivatives(model, z, m)[m]
        return float(d @ d)
    return Objective(f"deriv{m}", phi_m)


def _coef(k):
    return k if callable(k) else (lambda z, c=float(k): c)


def lagrangian_objective(model, k1=1.0, k2=1.0):
    """``phi(z) = k1 ||S(z)||^2 - k2 ||z||^2``."""
    f1, f2 = _coef(k1), _coef(k2)

    def phi(z):
        s = model.S(z)
        return float(f1(z) * (s @ s) - f2(z) * (z @ z))

    grad = None
    if not callable(k1) and not callable(k2):
        def grad(z):
            return 2.0 * float(k1) * model.J(z).T @ model.S(z) - 2.0 * float(k2) * z
    return Objective("lagrangian", phi, grad)


def make_objective(model, config):
    if config.objective == "derivative":
        return derivative_objective(model, config.m)
    return lagrangian_objective(model, config.k1, config.k2)


def _poi(model, rpv, z, method, converged=True, **diag):
    z = np.array(z, dtype=float)
    z[list(rpv.fixed_indices)] = rpv.fixed_values
    return Poi(z, method, rpv, converged, diag)


def _default_guess(model, rpv):
    free = rpv.free_indices(model.n)
    if model.equilibrium is not None:
        return np.asarray(model.equilibrium, dtype=float)[list(free)]
    return np.zeros(len(free))


def initial_free_guess(model, rpv, policy="qssa"):
    """Starting values of the free components.

    ``"qssa"`` solves ``dz_j/dt = 0`` for the free components (falling back
    to the equilibrium or zeros), ``"sim"`` uses the analytic SIM and a
    sequence is taken verbatim.
    """
    if not isinstance(policy, str):
        return np.atleast_1d(np.asarray(policy, dtype=float))
    if policy == "sim":
        return analytic_sim_point(model, rpv).free()
    if policy == "qssa":
        try:
            poi = zdp_local(model, rpv, 1, guess=_default_guess(model, rpv))
            if poi.converged:
                return poi.free()
        except (ConvergenceError, ZeroDivisionError, FloatingPointError):
            pass
        return _default_guess(model, rpv)
    if policy in ("zero", "equilibrium"):
        return _default_guess(model, rpv)
    raise ModelError(f"unknown initial guess policy {policy!r}")


def analytic_sim_point(model, rpv):
    """POI taken from the model's closed-form SIM."""
    if model.analytic is None:
        raise ModelError(f"model {model.name!r} has no analytic SIM")
    bundle = model.analytic
    if tuple(sorted(rpv.fixed_indices)) == tuple(bundle.sim_rpv):
        vals = dict(zip(rpv.fixed_indices, rpv.fixed_values))
        free = bundle.sim_map(np.array([vals[i] for i in bundle.sim_rpv]))
        return _poi(model, rpv, rpv.assemble(model.n, free), "analytic_sim")
    res = newton_solve(lambda u: bundle.sim_residual(rpv.assemble(model.n, u)),
                       _default_guess(model, rpv), tol=1e-14)
    return _poi(model, rpv, rpv.assemble(model.n, res.x), "analytic_sim", res.converged,
                residual=res.residual_norm)


def zdp_local(model, rpv, m, guess=None, tol=1e-12):
    """Annul the m-th time derivative of the free components at the anchor point."""
    if m < 1:
        raise ModelError(f"derivative order must be >= 1, got {m}")
    free = list(rpv.free_indices(model.n))
    u0 = _default_guess(model, rpv) if guess is None and m == 1 else guess
    if u0 is None:
        u0 = initial_free_guess(model, rpv, "qssa")
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))

    def raw(u):
        return time_derivatives(model, rpv.assemble(model.n, u), m)[m][free]

    scale = max(1.0, float(np.max(np.abs(raw(u0)))))
    res = newton_solve(lambda u: raw(u) / scale, u0, tol=tol)
    name = "qssa" if m == 1 else "zdp_local"
    return _poi(model, rpv, rpv.assemble(model.n, res.x), name, res.converged,
                residual=res.residual_norm, iterations=res.iterations, m=m)


def qssa(model, rpv, guess=None):
    """Quasi-steady-state point: first derivatives of the free components vanish."""
    return zdp_local(model, rpv, 1, guess=guess)


def _require_horizon(rpv):
    if rpv.horizon_t0 is None:
        raise ModelError("this method needs an RPV spec with horizon_t0 < t_star")
    return rpv.horizon_t0, rpv.t_star


def _adaptive_grid(system, z, ta, tb, ivp):
    return integrate(system, z, ta, tb, ivp).t


def zdp_nonlocal(model, rpv, m, ivp=None, guess=None, tol=1e-10):
    """RPVs fixed at ``t_f``; the m-th derivative of the free components vanishes at ``t0``.

    Shooting over the free components at ``t_f`` with backward integration.
    """
    t0, tf = _require_horizon(rpv)
    ivp = ivp or IvpOptions()
    free = list(rpv.free_indices(model.n))
    u0 = initial_free_guess(model, rpv) if guess is None else np.atleast_1d(guess)

    def start(u):
        return rpv.assemble(model.n, u)

    def raw(u, grid):
        z0 = integrate(model, start(u), tf, t0, ivp, grid=grid).final
        return time_derivatives(model, z0, m)[m][free]

    grid0 = _adaptive_grid(model, start(u0), tf, t0, ivp)
    scale = max(1.0, float(np.max(np.abs(raw(u0, grid0)))))
    res, grid = shoot_frozen(lambda u, g: raw(u, g) / scale,
                             lambda u: _adaptive_grid(model, start(u), tf, t0, ivp),
                             u0, tol=tol)
    return _poi(model, rpv, start(res.x), "zdp_nonlocal", res.converged,
                residual=res.residual_norm, iterations=res.iterations, m=m,
                horizon=tf - t0, steps=len(grid) - 1)


def stretching_rates(model, z):
    """Tangential and normal stretching rates and their ratio ``omega_nu / omega_tau``."""
    z = np.asarray(z, dtype=float)
    s = model.S(z)
    ns = np.linalg.norm(s)
    if ns == 0.0:
        raise ModelError("stretching rates are undefined at an equilibrium")
    J = model.J(z)
    sh = s / ns
    omega_tau = float(sh @ J @ sh)
    if model.n == 2:
        nh = np.array([s[1], -s[0]]) / ns
        omega_nu = float(nh @ J @ nh)
    else:
        # orthonormal basis of the complement of S
        q, _ = np.linalg.qr(np.column_stack([sh, np.eye(model.n)]))
        basis = q[:, 1:model.n]
        sym = 0.5 * (J + J.T)
        omega_nu = float(np.max(np.linalg.eigvalsh(basis.T @ sym @ basis)))
    return omega_tau, omega_nu, omega_nu / omega_tau


def _fcm_from(model, rpv, u0, tol):
    def raw(u):
        return np.array([flow_curvature_det(model, rpv.assemble(model.n, u))])

    scale = max(1e-300, abs(float(raw(u0)[0])))
    res = newton_solve(lambda u: raw(u) / scale, u0, tol=tol)
    z = rpv.assemble(model.n, res.x)
    diag = dict(residual=abs(float(raw(res.x)[0])), iterations=res.iterations)
    if np.linalg.norm(model.S(z)) == 0.0:
        return _poi(model, rpv, z, "fcm", res.converged, degenerate=True, **diag)
    _, _, ratio = stretching_rates(model, z)
    diag["stretching_ratio"] = ratio
    poi = _poi(model, rpv, z, "fcm", res.converged, **diag)
    if ratio < 1.0:
        raise ConvergenceError(
            f"flow-curvature root at {z} lies on a fast direction (ratio {ratio:.3g})", poi)
    return poi


def fcm(model, rpv, guess=None, tol=1e-12):
    """Zero of the flow-curvature determinant with the RPVs fixed.

    Starts from the QSSA point; if Newton lands on a fast direction
    (stretching ratio below one) it restarts from the m = 2, 3, 4
    zero-derivative points, which lie closer to the slow manifold.
    """
    free = list(rpv.free_indices(model.n))
    if len(free) != 1:
        raise ModelError("the flow curvature manifold has codimension one; "
                         f"fix {model.n - 1} RPVs (got {len(rpv.fixed_indices)})")
    if model.n < 2:
        raise ModelError("flow curvature needs n >= 2")
    if guess is not None:
        return _fcm_from(model, rpv, np.atleast_1d(np.asarray(guess, dtype=float)), tol)
    u0 = initial_free_guess(model, rpv)
    try:
        return _fcm_from(model, rpv, u0, tol)
    except ConvergenceError as first:
        failure = first
    for m in (2, 3, 4):
        try:
            start = zdp_local(model, rpv, m, guess=u0)
            return _fcm_from(model, rpv, start.free(), tol)
        except ConvergenceError as exc:
            failure = exc
    raise failure


class FetPoint(NamedTuple):
    z2: float
    slope: float
    residuals: tuple


def fet(model, z1_value, guess=None, tol=1e-12):
    """Solve the functional equation and its curvature-free truncation at ``z1``.

    Returns ``(z2, dz2/dz1, residuals)`` for a planar model.
    """
    if model.n != 2:
        raise ModelError("functional equation truncation is defined for planar models")
    z1 = float(z1_value)
    if guess is None:
        rpv = RpvSpec((0,), (z1,))
        z2 = float(initial_free_guess(model, rpv)[0])
        J = model.J([z1, z2])
        slope = -J[1, 0] / J[1, 1] if J[1, 1] != 0 else 1.0
        guess = (z2, slope)

    def residual(x):
        z = np.array([z1, x[0]])
        s, J = model.S(z), model.J(z)
        p = x[1]
        return np.array([s[1] - p * s[0],
                         p * (J[0, 0] + p * J[0, 1]) - (J[1, 0] + p * J[1, 1])])

    res = newton_solve(residual, np.asarray(guess, dtype=float), tol=tol)
    if not res.converged:
        raise ConvergenceError("functional equation Newton solve diverged", res)
    r = residual(res.x)
    if model.S([z1, res.x[0]])[0] == 0.0:
        raise ConvergenceError("dz1/dt vanishes at the FET point; slope undefined", res)
    return FetPoint(float(res.x[0]), float(res.x[1]), (float(r[0]), float(r[1])))


def bvp_reconstruct(model, rpv, K, ivp=None, guess=None, tol=1e-12):
    """Two-point problem: RPVs fixed at ``t_f``, free components equal ``K`` at ``t0``.

    Shooting runs forward from ``t0`` (decaying fast modes) over the unknown
    RPV values at ``t0``.
    """
    t0, tf = _require_horizon(rpv)
    ivp = ivp or IvpOptions()
    free = list(rpv.free_indices(model.n))
    fixed = list(rpv.fixed_indices)
    K = np.atleast_1d(np.asarray(K, dtype=float))
    if K.size != len(free):
        raise ModelError(f"K needs {len(free)} entries, got {K.size}")
    target = np.asarray(rpv.fixed_values)

    def start(v):
        z = np.empty(model.n)
        z[free], z[fixed] = K, v
        return z

    if guess is None:
        z_tf = rpv.assemble(model.n, initial_free_guess(model, rpv))
        try:
            # a rough backward sweep is enough for a starting point
            guess = integrate(model, z_tf, tf, t0, IvpOptions(ivp.method, 1e-6, 1e-9)).final[fixed]
        except IntegrationError:
            guess = target.copy()
        if not np.all(np.isfinite(guess)):
            guess = target.copy()

    last = {}

    def residual(v, grid):
        traj = integrate(model, start(v), t0, tf, ivp, grid=grid)
        last.update(v=v.copy(), grid=grid, traj=traj)
        return (traj.final[fixed] - target) / (1.0 + np.abs(target))

    res, grid = shoot_frozen(residual,
                             lambda v: _adaptive_grid(model, start(v), t0, tf, ivp),
                             np.atleast_1d(guess), tol=tol)
    if last.get("grid") is grid and np.array_equal(last["v"], res.x):
        traj = last["traj"]
    else:
        traj = integrate(model, start(res.x), t0, tf, ivp, grid=grid)
    feasible = None
    if model.feasible_set is not None:
        feasible = all(model.feasible_set.contains(y) for y in traj.y)
    return _poi(model, rpv, traj.final, "bvp", res.converged,
                residual=res.residual_norm, iterations=res.iterations, horizon=tf - t0,
                K=tuple(K), start=start(res.x), feasible=feasible, steps=len(grid) - 1)


def _objective_system(model, objective):
    n = model.n

    def f(w):
        z = w[:n]
        return np.append(model.S(z), objective.phi(z))

    return f


def trajectory_objective(model, rpv, objective, evaluation="integral", ivp=None):
    """Return ``(J, build_grid)`` where ``J(u, grid)`` is the reverse-mode objective.

    ``u`` are the free components at ``t_f``; the system is integrated
    backward to ``t0``.
    """
    t0, tf = _require_horizon(rpv)
    ivp = ivp or IvpOptions()
    n = model.n
    aug = _objective_system(model, objective)

    if evaluation == "endpoint":
        def J(u, grid):
            z0 = integrate(model, rpv.assemble(n, u), tf, t0, ivp, grid=grid).final
            return objective.phi(z0)

        def build(u):
            return _adaptive_grid(model, rpv.assemble(n, u), tf, t0, ivp)
    else:
        def J(u, grid):
            w = np.append(rpv.assemble(n, u), 0.0)
            return -integrate(aug, w, tf, t0, ivp, grid=grid).final[n]

        def build(u):
            return _adaptive_grid(aug, np.append(rpv.assemble(n, u), 0.0), tf, t0, ivp)
    return J, build


def optimize_trajectory(model, rpv, config=MethodConfig()):
    """Minimize the trajectory objective over the free components at ``t_f``.

    The free components act as a boundary control at ``t_f``.  In local
    mode (or without a horizon) the objective is evaluated at the anchor
    point itself.
    """
    objective = make_objective(model, config)
    if config.mode == "local" or rpv.horizon_t0 is None:
        if config.mode == "reverse":
            raise ModelError("reverse mode needs an RPV spec with horizon_t0")
        return _local_minimize(model, rpv, objective, config, "optimize_local")
    t0, tf = _require_horizon(rpv)
    u0 = initial_free_guess(model, rpv, config.initial_guess)
    J, build = trajectory_objective(model, rpv, objective, config.evaluation, config.ivp)
    gradient = None
    if config.adjoint_gradient:
        if config.evaluation != "integral":
            raise ModelError("adjoint gradients are available for the integral objective only")
        from .adjoint import adjoint_gradient
        gradient = lambda u: adjoint_gradient(model, rpv, objective, u, config.ivp)
    u = np.asarray(u0, dtype=float)
    result = None
    for sweep in range(2):
        grid = build(u)
        result = minimize(lambda v, g=grid: J(v, g), u, tol=config.tol,
                          gradient=gradient, simplex=sweep == 0)
        u = result.x
    z = rpv.assemble(model.n, u)
    diag = dict(objective=result.fun, evaluations=result.nfev, horizon=tf - t0,
                gradient_norm=result.gradient_norm, steps=len(grid) - 1)
    if model.feasible_set is not None:
        traj = integrate(model, z, tf, t0, config.ivp, grid=grid)
        diag["feasible"] = all(model.feasible_set.contains(y) for y in traj.y)
    return _poi(model, rpv, z, "optimize", result.converged, **diag)


def _local_minimize(model, rpv, objective, config, name):
    u0 = initial_free_guess(model, rpv, config.initial_guess)
    res = minimize(lambda u: objective.phi(rpv.assemble(model.n, u)), u0, tol=config.tol)
    return _poi(model, rpv, rpv.assemble(model.n, res.x), name, res.converged,
                objective=res.fun, evaluations=res.nfev, gradient_norm=res.gradient_norm)


def local_min_derivative(model, rpv, m, guess="qssa", tol=1e-12):
    """Minimize ``||d^m z/dt^m||^2`` at the anchor point over the free components."""
    cfg = MethodConfig(m=m, mode="local", initial_guess=guess, tol=tol)
    return _local_minimize(model, rpv, derivative_objective(model, m), cfg, "local_min")


@dataclass
class MinT0Result:
    t0_min: float
    poi: Poi
    ratio: float
    local_poi: Poi
    local_ratio: float
    active_rows: tuple
    constraint_time: str


def endpoint_optimum_linear(gamma, m, z2_tf, t0, t_f=0.0):
    """Slow/fast amplitudes minimizing ``||d^m z/dt^m||^2`` at ``t0`` with ``z2(t_f)`` fixed.

    Returns ``(slow, fast)`` such that ``z(t) = slow e^{-(t-t_f)} (1, 1) +
    fast e^{-(1+gamma)(t-t_f)} (1, -1)``.
    """
    xi = (1.0 + gamma) ** (2 * m)
    s = t0 - t_f
    fast = -z2_tf / (1.0 + xi * math.exp(-2.0 * gamma * s))
    return z2_tf + fast, fast


def min_feasible_t0(model, m, z2_0, polyhedron=None, t_f=0.0, constraint_time="start",
                    t_floor=-200.0, tol=1e-12):
    """Most negative horizon start keeping the optimal trajectory feasible.

    For each trial ``t0`` the pointwise optimum of ``||d^m z/dt^m||^2`` at
    ``t0`` (with ``z2(t_f) = z2_0``) is taken in closed form; its state at
    ``t0`` (``constraint_time="start"``) or along ``[t0, t_f]``
    (``"trajectory"``) must lie in ``polyhedron``.  Feasibility is assumed
    monotone in ``t0``; the boundary is bracketed by doubling steps and
    bisected.
    """
    if model.name != "linear2d":
        raise ModelError("min_feasible_t0 uses the closed-form optimum of linear2d")
    poly = polyhedron if polyhedron is not None else model.feasible_set
    if poly is None:
        raise ModelError("a feasibility polyhedron is required")
    if constraint_time not in ("start", "trajectory"):
        raise ModelError(f"unknown constraint_time {constraint_time!r}")
    g = model.params["gamma"]

    def state(t0, t):
        slow, fast = endpoint_optimum_linear(g, m, z2_0, t0, t_f)
        a, b = slow * math.exp(-(t - t_f)), fast * math.exp(-(1.0 + g) * (t - t_f))
        return np.array([a + b, a - b])

    def feasible(t0):
        if constraint_time == "start":
            return poly.contains(state(t0, t0))
        return all(poly.contains(state(t0, t)) for t in np.linspace(t0, t_f, 401))

    if not feasible(t_f):
        raise ModelError(f"no feasible t0: the local optimum at t_f={t_f} is infeasible")
    good, step = t_f, 0.25
    bad = None
    while good - step >= t_floor:
        if feasible(good - step):
            good -= step
            step *= 2.0
        else:
            bad = good - step
            break
    if bad is None:
        bad = t_floor
        if feasible(bad):
            good = bad
    while good - bad > tol * (1.0 + abs(good)) and bad < good:
        mid = 0.5 * (good + bad)
        if mid in (good, bad):
            break
        if feasible(mid):
            good = mid
        else:
            bad = mid
    rpv = RpvSpec((1,), (z2_0,), t_f, good if good < t_f else None)
    z_tf = state(good, t_f)
    active = tuple(int(i) for i in np.flatnonzero(poly.violation(state(good, good)) > -1e-6))
    local_rpv = RpvSpec((1,), (z2_0,), t_f)
    local = _poi(model, local_rpv, state(t_f, t_f), "local_min_closed_form")
    return MinT0Result(
        t0_min=good,
        poi=_poi(model, rpv, z_tf, "min_t0", t0_min=good),
        ratio=float(z_tf[0] / z2_0),
        local_poi=local,
        local_ratio=float(local.state[0] / z2_0),
        active_rows=active,
        constraint_time=constraint_time,
    )


def timed(fn, *args, **kwargs):
    """Run ``fn`` and return ``(result, wall seconds)``."""
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t
