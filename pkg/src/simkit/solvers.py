"""Numerical machinery: IVP integration, Newton, single shooting, minimization.

Both integrators can replay a previously accepted step grid.  Shooting and
optimization freeze the grid while iterating so that residuals and
objectives are smooth functions of the unknowns (affine or quadratic for
linear models); the grid is then re-adapted at the converged point and the
solve polished once more.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize as _sciopt

from .errors import ConvergenceError, IntegrationError, ModelError

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array(_A[6] + [0.0])
_BHAT = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                  187 / 2100, 1 / 40])
_E = _B - _BHAT

# Alexander's two-stage L-stable SDIRK of order 2.
_GSD = 1.0 - 1.0 / math.sqrt(2.0)

METHODS = ("dopri5", "sdirk2")


@dataclass(frozen=True)
class IvpOptions:
    method: str = "dopri5"
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_steps: int = 200_000
    first_step: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ModelError(f"unknown integrator {self.method!r}; choose from {METHODS}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ModelError("integration tolerances must be positive")


@dataclass
class Trajectory:
    """States ``y[i]`` at the monotone times ``t[i]``, with slopes ``f[i]``.

    Calling the trajectory interpolates with cubic Hermite polynomials.
    """

    t: np.ndarray
    y: np.ndarray
    f: np.ndarray
    nfev: int = 0

    @property
    def final(self):
        return self.y[-1]

    @property
    def initial(self):
        return self.y[0]

    def __len__(self):
        return len(self.t)

    def __call__(self, tq):
        t, y, f = self.t, self.y, self.f
        forward = t[-1] >= t[0]
        ts = t if forward else t[::-1]
        lo, hi = min(t[0], t[-1]), max(t[0], t[-1])
        if not lo - 1e-12 * (1 + abs(lo)) <= tq <= hi + 1e-12 * (1 + abs(hi)):
            raise ValueError(f"t={tq} outside trajectory span [{lo}, {hi}]")
        j = int(np.clip(np.searchsorted(ts, tq) - 1, 0, len(t) - 2))
        if not forward:
            j = len(t) - 2 - j
        t0, t1 = t[j], t[j + 1]
        h = t1 - t0
        s = (tq - t0) / h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * y[j] + h10 * h * f[j] + h01 * y[j + 1] + h11 * h * f[j + 1]

    def component(self, indices):
        """Trajectory restricted to the given state components."""
        idx = list(indices)
        return Trajectory(self.t, self.y[:, idx], self.f[:, idx], self.nfev)


def _resolve(system, jac):
    if hasattr(system, "S") and hasattr(system, "J"):
        return system.S, (jac or system.J)
    if not callable(system):
        raise ModelError("system must be a KineticModel or a callable f(z)")
    return system, jac


def _fd_jacobian(f, y, fy):
    n = len(y)
    J = np.empty((n, n))
    for i in range(n):
        h = 1e-7 * (1.0 + abs(y[i]))
        yp = y.copy()
        yp[i] += h
        J[:, i] = (f(yp) - fy) / h
    return J


def _rms(x):
    return math.sqrt(float(np.mean(x * x)))


_A_ROWS = [np.array(r) for r in _A]


def _dopri_step(f, y, k1, h):
    K = np.empty((7, y.size))
    K[0] = k1
    for i in range(1, 7):
        K[i] = f(y + h * (_A_ROWS[i] @ K[:i]))
    # stage 7 is evaluated at the 5th-order solution (FSAL)
    ynew = y + h * (_B[:6] @ K[:6])
    err = h * (_E @ K)
    return ynew, K[6], err


def _sdirk_stage(f, jac_mat, base, y_guess, hg, sc):
    n = len(base)
    M = np.eye(n) - hg * jac_mat
    Y = y_guess.copy()
    for _ in range(12):
        G = Y - base - hg * f(Y)
        dY = np.linalg.solve(M, -G)
        Y = Y + dY
        if not np.all(np.isfinite(Y)):
            return None
        if _rms(dY / sc) <= 1e-3:
            return Y
    return None


def _sdirk_single(f, Jm, y, fy, h, sc):
    hg = h * _GSD
    Y1 = _sdirk_stage(f, Jm, y, y + hg * fy, hg, sc)
    if Y1 is None:
        return None
    K1 = (Y1 - y) / hg
    base2 = y + h * (1.0 - _GSD) * K1
    Y2 = _sdirk_stage(f, Jm, base2, Y1 + h * (1.0 - 2 * _GSD) * K1, hg, sc)
    return Y2


def _sdirk_step(f, jac, y, fy, h, rtol, atol, control=True):
    """Two SDIRK2 half steps; with ``control`` a full step gives the error estimate.

    The half-step pair is the accepted result in both adaptive and replay
    runs, so replaying a grid reproduces the adaptive trajectory.
    """
    sc = atol + rtol * np.abs(y)
    Jm = jac(y) if jac is not None else _fd_jacobian(f, y, fy)
    mid = _sdirk_single(f, Jm, y, fy, h / 2, sc)
    if mid is None:
        return None
    fmid = f(mid)
    Jmid = jac(mid) if jac is not None else _fd_jacobian(f, mid, fmid)
    fine = _sdirk_single(f, Jmid, mid, fmid, h / 2, sc)
    if fine is None:
        return None
    if not control:
        return fine, f(fine), None
    big = _sdirk_single(f, Jm, y, fy, h, sc)
    if big is None:
        return None
    # local errors accumulate to a global error of order local**(2/3) for
    # this second-order pair; a local target of 100 sqrt(rtol) * tol keeps
    # the global error near the requested tolerance
    return fine, f(fine), (fine - big) / (3.0 * min(1.0, 100.0 * math.sqrt(rtol)))


def _initial_step(f, y0, f0, direction, span, rtol, atol, order):
    sc = atol + rtol * np.abs(y0)
    d0, d1 = _rms(y0 / sc), _rms(f0 / sc)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + direction * h0 * f0
    d2 = _rms((f(y1) - f0) / sc) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    # zero components make the scale collapse to atol; error control takes
    # over from a modest floor
    return min(max(min(100 * h0, h1), 1e-8 * span), span)


def integrate(system, z0, t0, t1, opts=None, grid=None, jac=None):
    """Integrate ``dz/dt = S(z)`` from ``t0`` to ``t1`` (either direction).

    Parameters
    ----------
    system : KineticModel or callable
        Autonomous vector field.
    grid : array_like, optional
        Replay these step times (``grid[0] == t0``, ``grid[-1] == t1``)
        without error control.
    """
    opts = opts or IvpOptions()
    f, jac = _resolve(system, jac)
    y = np.array(z0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise IntegrationError("non-finite initial state", t0)
    fy = np.asarray(f(y), dtype=float)
    nfev = 1
    if grid is not None:
        return _integrate_grid(f, jac, y, fy, np.asarray(grid, dtype=float), opts)
    if t1 == t0:
        return Trajectory(np.array([t0]), y[None, :], fy[None, :], nfev)

    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    implicit = opts.method == "sdirk2"
    order = 2 if implicit else 4
    rtol, atol = opts.rel_tol, opts.abs_tol
    h = opts.first_step or _initial_step(f, y, fy, direction, span, rtol, atol, order)
    nfev += 1
    ts, ys, fs = [t0], [y], [fy]
    t = t0
    steps = 0
    while direction * (t1 - t) > 0:
        if steps >= opts.max_steps:
            raise IntegrationError(f"step budget {opts.max_steps} exhausted", t)
        if h <= 1e-14 * max(1.0, abs(t)):
            raise IntegrationError("step size underflow", t)
        h = min(h, abs(t1 - t))
        hs = direction * h
        if implicit:
            out = _sdirk_step(f, jac, y, fy, hs, rtol, atol)
            nfev += 20
            if out is None:
                h *= 0.5
                steps += 1
                continue
            ynew, fnew, err = out
        else:
            ynew, fnew, err = _dopri_step(f, y, fy, hs)
            nfev += 6
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        en = _rms(err / sc)
        steps += 1
        if not np.isfinite(en):
            h *= 0.2
            continue
        if en <= 1.0:
            t = t1 if abs(t1 - (t + hs)) <= 1e-14 * max(1.0, abs(t1)) else t + hs
            y, fy = ynew, fnew
            ts.append(t)
            ys.append(y)
            fs.append(fy)
            factor = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** (-1.0 / (order + 1))))
            h *= factor
        else:
            h *= max(0.2, 0.9 * en ** (-1.0 / (order + 1)))
    return Trajectory(np.array(ts), np.array(ys), np.array(fs), nfev)


def _integrate_grid(f, jac, y, fy, grid, opts):
    ys, fs = [y], [fy]
    nfev = 1
    for t_a, t_b in zip(grid[:-1], grid[1:]):
        h = t_b - t_a
        if opts.method == "sdirk2":
            out = _sdirk_step(f, jac, y, fy, h, opts.rel_tol, opts.abs_tol, control=False)
            if out is None:
                raise IntegrationError("Newton failure in implicit stage", t_a)
            y, fy, _ = out
        else:
            y, fy, _ = _dopri_step(f, y, fy, h)
        if not np.all(np.isfinite(y)):
            raise IntegrationError("non-finite state", t_b)
        nfev += 6
        ys.append(y)
        fs.append(fy)
    return Trajectory(grid.copy(), np.array(ys), np.array(fs), nfev)


@dataclass
class NewtonResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual_norm: float
    message: str = ""
    jacobian: Optional[np.ndarray] = field(default=None, repr=False)


def newton_solve(residual, x0, tol=1e-10, damping=True, max_iter=50, xtol=1e-13,
                 jacobian=None, fd_step=1e-7, initial_jacobian=None):
    """Damped Newton iteration with forward-difference Jacobians.

    Converges when ``max|residual| <= tol`` or when a full Newton step is
    below ``xtol * (1 + max|x|)``.  A finite-difference Jacobian is kept
    (chord steps) while each full step shrinks the residual a thousandfold;
    ``initial_jacobian`` seeds it.  On failure the best iterate is returned
    with ``converged=False``; a singular Jacobian raises
    :class:`ConvergenceError`.
    """
    x = np.array(x0, dtype=float)
    r = np.atleast_1d(np.asarray(residual(x), dtype=float))
    if r.shape != x.shape:
        raise ModelError(f"residual length {r.size} differs from unknown length {x.size}")
    rn = float(np.max(np.abs(r))) if r.size else 0.0
    best = (rn, x.copy())
    Jm = None if initial_jacobian is None else np.array(initial_jacobian, dtype=float)
    fresh = False
    for it in range(max_iter + 1):
        if rn <= tol:
            return NewtonResult(x, True, it, rn, jacobian=Jm)
        if it == max_iter:
            break
        if jacobian is not None:
            Jm, fresh = np.atleast_2d(jacobian(x)), True
        elif Jm is None:
            Jm = np.empty((r.size, x.size))
            for i in range(x.size):
                h = fd_step * (1.0 + abs(x[i]))
                xp = x.copy()
                xp[i] += h
                Jm[:, i] = (np.atleast_1d(residual(xp)) - r) / h
            fresh = True
        try:
            dx = np.linalg.solve(Jm, -r)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular Jacobian in Newton iteration", best[1])
        if not np.all(np.isfinite(dx)):
            raise ConvergenceError("singular Jacobian in Newton iteration", best[1])
        if np.max(np.abs(dx)) <= xtol * (1.0 + np.max(np.abs(x))):
            x = x + dx
            r = np.atleast_1d(residual(x))
            rn_new = float(np.max(np.abs(r)))
            return NewtonResult(x, True, it + 1, rn_new, "step tolerance", Jm)
        lam = 1.0
        for _ in range(31 if damping else 1):
            xn = x + lam * dx
            rn_try = np.atleast_1d(np.asarray(residual(xn), dtype=float))
            rnn = float(np.max(np.abs(rn_try)))
            if np.isfinite(rnn) and (not damping or rnn < rn or lam < 2**-30):
                break
            if not fresh:
                break  # stale chord Jacobian: refresh before damping
            lam *= 0.5
        if not fresh and not (np.isfinite(rnn) and rnn < rn):
            Jm = None
            continue
        if lam < 1.0 or not rnn <= 1e-3 * rn:
            Jm = None if jacobian is None else Jm
        fresh = False
        x, r, rn = xn, rn_try, rnn
        if np.isfinite(rn) and rn < best[0]:
            best = (rn, x.copy())
    return NewtonResult(best[1], False, max_iter, best[0], "maximum iterations reached")


@dataclass
class ShootingProblem:
    """Square boundary-value residual in the shooting unknowns."""

    residual: Callable[[np.ndarray], np.ndarray]
    n_unknowns: int
    fd_rel_step: float = 1e-7


def shoot(problem, u0, tol=1e-9, xtol=1e-13, max_iter=50, raise_on_failure=True,
          initial_jacobian=None):
    """Solve ``problem.residual(u) = 0`` by Newton iteration from ``u0``."""
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    if u0.size != problem.n_unknowns:
        raise ModelError("initial guess length differs from the number of unknowns")
    res = newton_solve(problem.residual, u0, tol=tol, xtol=xtol, max_iter=max_iter,
                       fd_step=problem.fd_rel_step, initial_jacobian=initial_jacobian)
    if not res.converged and raise_on_failure:
        raise ConvergenceError(
            f"shooting did not converge: residual {res.residual_norm:.3e}", res)
    return res


def shoot_frozen(residual_on_grid, build_grid, u0, tol=1e-9, xtol=1e-13, sweeps=2,
                 max_iter=50):
    """Shooting with step grids frozen during each Newton sweep.

    ``build_grid(u)`` integrates adaptively at ``u`` and returns the step
    times; ``residual_on_grid(u, grid)`` evaluates the boundary residual on
    that grid.  Returns ``(NewtonResult, grid)``; the iteration count is
    summed over sweeps.
    """
    u = np.atleast_1d(np.asarray(u0, dtype=float))
    res, grid, jac = None, None, None
    total = 0
    for _ in range(sweeps):
        grid = build_grid(u)
        problem = ShootingProblem(lambda v, g=grid: residual_on_grid(v, g), u.size)
        res = shoot(problem, u, tol=tol, xtol=xtol, max_iter=max_iter,
                    raise_on_failure=False, initial_jacobian=jac)
        u, jac = res.x, res.jacobian
        total += res.iterations
    res.iterations = total
    if not res.converged:
        raise ConvergenceError(
            f"shooting did not converge: residual {res.residual_norm:.3e}", res)
    return res, grid


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    nfev: int
    converged: bool
    message: str = ""
    gradient_norm: float = float("nan")


def _fd_grad_hess(fun, x, h):
    n = x.size
    f0 = fun(x)
    g = np.empty(n)
    H = np.empty((n, n))
    fp, fm = np.empty(n), np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h[i]
        fp[i], fm[i] = fun(x + e), fun(x - e)
        g[i] = (fp[i] - fm[i]) / (2 * h[i])
        H[i, i] = (fp[i] - 2 * f0 + fm[i]) / h[i] ** 2
    for i in range(n):
        for j in range(i + 1, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i], ej[j] = h[i], h[j]
            fpp = fun(x + ei + ej)
            H[i, j] = H[j, i] = (fpp - fp[i] - fp[j] + f0) / (h[i] * h[j])
    return f0, g, H, 1 + 2 * n + n * (n - 1) // 2


def minimize(objective, x0, bounds=None, tol=1e-10, refine=True, max_evals=5000,
             gradient=None, simplex_step=0.05, simplex=True):
    """Bound-constrained minimization: Nelder-Mead, then optional Newton polish.

    The simplex is built deterministically from ``x0``.  With ``refine`` the
    simplex stage stops early (the polish supplies the last digits);
    ``simplex=False`` skips it and polishes from ``x0``.  The polish solves
    ``grad f = 0`` with central-difference derivatives (or the supplied
    ``gradient``), keeping a step only if it does not increase ``f``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.size
    nfev = 0

    def fun(x):
        nonlocal nfev
        nfev += 1
        v = float(objective(np.asarray(x, dtype=float)))
        return v if np.isfinite(v) else np.inf

    f0 = fun(x0)
    if f0 == np.inf:
        raise ConvergenceError("objective is not finite at the initial point", x0)
    scale = np.maximum(np.abs(x0), 1.0)
    simplex_pts = np.vstack([x0] + [x0 + simplex_step * scale[i] * np.eye(n)[i]
                                    for i in range(n)])
    lb = ub = None
    if bounds is not None:
        lb = np.array([-np.inf if b[0] is None else b[0] for b in bounds], dtype=float)
        ub = np.array([np.inf if b[1] is None else b[1] for b in bounds], dtype=float)
        simplex_pts = np.clip(simplex_pts, lb, ub)
    if simplex:
        xatol = (1e-4 if refine else 1e-9) * float(np.max(scale))
        fatol = 1e-7 * (1.0 + abs(f0)) if refine else tol
        nm = _sciopt.minimize(
            fun, x0, method="Nelder-Mead",
            bounds=None if bounds is None else list(zip(lb, ub)),
            options={"initial_simplex": simplex_pts, "xatol": xatol, "fatol": fatol,
                     "maxfev": max_evals, "adaptive": n > 2},
        )
        x, fx = np.array(nm.x, dtype=float), float(nm.fun)
        converged = bool(nm.success)
        message = str(nm.message)
    else:
        x, fx, converged, message = x0.copy(), f0, False, "polish only"
    gnorm = float("nan")
    if refine:
        h = 1e-4 * np.maximum(np.abs(x), 1.0)
        for _ in range(25):
            if gradient is not None:
                g = np.atleast_1d(gradient(x))
                _, _, H, k = _fd_grad_hess(fun, x, h)
            else:
                _, g, H, k = _fd_grad_hess(fun, x, h)
            if nfev + k > max_evals:
                break
            gnorm = float(np.max(np.abs(g)))
            try:
                step = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                break
            xn = x + step
            if lb is not None:
                xn = np.clip(xn, lb, ub)
            small = np.max(np.abs(step)) <= 1e-12 * (1.0 + np.max(np.abs(x)))
            # decrease promised by the quadratic model
            flat = -0.5 * float(g @ step) <= 1e-10 * (1.0 + abs(fx))
            fn = fun(xn)
            if not fn <= fx + 1e-14 * (1.0 + abs(fx)):
                # no descent left: stationary up to evaluation noise
                converged = converged or small or flat
                break
            x, fx = xn, fn
            converged = True
            message = "Newton polish"
            if small or flat:
                break
    return MinimizeResult(x, fx, nfev, converged, message, gnorm)
