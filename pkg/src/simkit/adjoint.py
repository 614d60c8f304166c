"""Boundary-control formulation: Hamiltonian, costate dynamics, primal-dual BVP.

With ``z(t_f)`` partly free (the boundary control) and objective
``int_{t0}^{t_f} phi(z) dt``, optimal pairs satisfy

    dz/dt = S(z),           z_rpv(t_f) fixed,
    dlam/dt = -grad phi(z) - J_S(z)^T lam,
    lam(t0) = 0,            lam_free(t_f) = 0,

and ``H = phi + lam^T S`` is constant along them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError, ModelError
from .methods import Objective, Poi, _poi, _require_horizon, initial_free_guess
from .oracle import LinearAdjointConstants, hamiltonian_value, linear_adjoint_constants
from .solvers import IvpOptions, Trajectory, integrate, shoot_frozen

__all__ = [
    "HamiltonianEval", "AdjointSolution", "LinearAdjointConstants", "adjoint_gradient",
    "adjoint_rhs", "fd_gradient", "hamiltonian", "hamiltonian_value",
    "linear_adjoint_constants", "solve_adjoint_bvp",
]


@dataclass(frozen=True)
class HamiltonianEval:
    value: float
    phi_term: float
    flux_term: float


def _phi(phi):
    return phi.phi if isinstance(phi, Objective) else phi


def hamiltonian(model, phi, z, lam):
    """``H = phi(z) + lam^T S(z)`` with its two terms."""
    z = np.asarray(z, dtype=float)
    a = float(_phi(phi)(z))
    b = float(np.asarray(lam, dtype=float) @ model.S(z))
    return HamiltonianEval(a + b, a, b)


def fd_gradient(phi, z, h=1e-6):
    """Central differences with one Richardson extrapolation (steps ``h`` and ``2h``)."""
    z = np.asarray(z, dtype=float)
    g = np.empty(z.size)
    with np.errstate(invalid="ignore", over="ignore"):
        for i in range(z.size):
            e = np.zeros(z.size)
            e[i] = h * max(1.0, abs(z[i]))
            d1 = (phi(z + e) - phi(z - e)) / (2.0 * e[i])
            d2 = (phi(z + 2 * e) - phi(z - 2 * e)) / (4.0 * e[i])
            g[i] = (4.0 * d1 - d2) / 3.0
    if not np.all(np.isfinite(g)):
        raise ModelError(f"non-finite objective probe near z={z}")
    return g


def _gradient(phi):
    if isinstance(phi, Objective) and phi.grad is not None:
        return phi.grad
    f = _phi(phi)
    return lambda z: fd_gradient(f, z)


def adjoint_rhs(model, phi, z, lam):
    """``dlam/dt = -(grad phi(z) + J_S(z)^T lam)``."""
    z = np.asarray(z, dtype=float)
    return -(_gradient(phi)(z) + model.J(z).T @ np.asarray(lam, dtype=float))


def _primal_dual_system(model, phi):
    n = model.n
    grad = _gradient(phi)

    def f(w):
        z, lam = w[:n], w[n:]
        return np.concatenate([model.S(z), -(grad(z) + model.J(z).T @ lam)])

    def jac(w):
        # exact for quadratic phi; used only inside implicit steps
        z = w[:n]
        Jz = model.J(z)
        out = np.zeros((2 * n, 2 * n))
        out[:n, :n] = Jz
        out[n:, n:] = -Jz.T
        return out

    return f, jac


@dataclass
class AdjointSolution:
    primal: Trajectory
    costate: Trajectory
    poi: Poi
    hamiltonian: np.ndarray

    @property
    def hamiltonian_drift(self):
        """``max |H(t) - H(t0)| / (1 + |H(t0)|)`` over the step grid."""
        h0 = self.hamiltonian[0]
        return float(np.max(np.abs(self.hamiltonian - h0)) / (1.0 + abs(h0)))


def solve_adjoint_bvp(model, rpv, phi, ivp=None, guess=None, tol=1e-10):
    """Shoot the primal-dual boundary value problem backward from ``t_f``.

    Unknowns are the free state components and the RPV costates at ``t_f``;
    the conditions are ``lam(t0) = 0``.
    """
    t0, tf = _require_horizon(rpv)
    ivp = ivp or IvpOptions()
    n = model.n
    free = list(rpv.free_indices(n))
    fixed = list(rpv.fixed_indices)
    f, jac = _primal_dual_system(model, phi)

    def start(u):
        w = np.zeros(2 * n)
        w[:n] = rpv.assemble(n, u[:len(free)])
        w[n + np.array(fixed)] = u[len(free):]
        return w

    if guess is None:
        guess = np.concatenate([initial_free_guess(model, rpv), np.zeros(len(fixed))])
    u0 = np.asarray(guess, dtype=float)

    def build(u):
        return integrate(f, start(u), tf, t0, ivp, jac=jac).t

    def raw(u, grid):
        return integrate(f, start(u), tf, t0, ivp, grid=grid, jac=jac).final[n:]

    grid0 = build(u0)
    scale = max(1.0, float(np.max(np.abs(raw(u0, grid0)))))
    try:
        res, grid = shoot_frozen(lambda u, g: raw(u, g) / scale, build, u0, tol=tol)
    except IntegrationError as exc:
        raise IntegrationError(f"costate integration failed over [{t0}, {tf}]: {exc}",
                               exc.t) from exc
    traj = integrate(f, start(res.x), tf, t0, ivp, grid=grid, jac=jac)
    # reorder to increasing time
    order = np.argsort(traj.t)
    t, y, dy = traj.t[order], traj.y[order], traj.f[order]
    primal = Trajectory(t, y[:, :n], dy[:, :n], traj.nfev)
    costate = Trajectory(t, y[:, n:], dy[:, n:], traj.nfev)
    H = np.array([hamiltonian(model, phi, y[i, :n], y[i, n:]).value for i in range(len(t))])
    poi = _poi(model, rpv, y[-1, :n], "adjoint_bvp", res.converged,
               residual=res.residual_norm * scale, iterations=res.iterations,
               horizon=tf - t0, costate_tf=y[-1, n:].copy(), costate_t0=y[0, n:].copy())
    return AdjointSolution(primal, costate, poi, H)


def adjoint_gradient(model, rpv, phi, u, ivp=None):
    """Gradient of ``int_{t0}^{t_f} phi(z) dt`` with respect to the free ``z(t_f)``.

    One backward primal solve plus one forward sweep of the costate
    ``nu`` with ``nu(t0) = 0``; the gradient is ``-nu_free(t_f)``.
    """
    t0, tf = _require_horizon(rpv)
    ivp = ivp or IvpOptions()
    n = model.n
    z0 = integrate(model, rpv.assemble(n, u), tf, t0, ivp).final
    f, jac = _primal_dual_system(model, phi)
    w = integrate(f, np.concatenate([z0, np.zeros(n)]), t0, tf, ivp, jac=jac).final
    return -w[n + np.array(rpv.free_indices(n))]
