"""Trajectory-based slow invariant manifold computation for kinetic ODE models."""
from .errors import ConvergenceError, IntegrationError, ModelError, SimkitError
from .models import (KineticModel, Polyhedron, RpvSpec, make_davis_skodje, make_linear2d,
                     make_linear3d, make_model)
from .taylor import flow_curvature_det, second_derivative, time_derivatives
from .solvers import IvpOptions, Trajectory, integrate, minimize, newton_solve, shoot
from .methods import (MethodConfig, Poi, analytic_sim_point, bvp_reconstruct, fcm, fet,
                      local_min_derivative, min_feasible_t0, optimize_trajectory, qssa,
                      stretching_rates, zdp_local, zdp_nonlocal)
from .adjoint import hamiltonian, linear_adjoint_constants, solve_adjoint_bvp

__version__ = "0.1.0"
