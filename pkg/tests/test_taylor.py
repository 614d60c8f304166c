import math

import numpy as np
import pytest

from simkit import ModelError, make_davis_skodje, make_linear2d, make_linear3d, time_derivatives
from simkit.models import KineticModel
from simkit.solvers import IvpOptions, integrate
from simkit.taylor import (flow_curvature_det, linear_matrix_power, linear_power_diagonal,
                           second_derivative)


def test_slow_eigenvector_derivatives():
    d = time_derivatives(make_linear2d(2.0), [1.0, 1.0], 3)
    for k in range(1, 4):
        np.testing.assert_allclose(d[k], (-1.0) ** k * np.ones(2), atol=1e-15)


def test_fast_eigenvector_derivatives():
    d = time_derivatives(make_linear2d(2.0), [1.0, -1.0], 2)
    np.testing.assert_allclose(d[1], [-3.0, 3.0], atol=1e-15)
    np.testing.assert_allclose(d[2], [9.0, -9.0], atol=1e-14)


@pytest.mark.parametrize("model", [make_linear2d(2.0), make_davis_skodje(3.0), make_linear3d(2.0, 4.0)])
def test_equilibrium_derivatives_vanish(model):
    d = time_derivatives(model, np.zeros(model.n), 6)
    assert all(np.all(d[k] == 0.0) for k in range(1, 7))


@pytest.mark.parametrize("model, z, expected", [
    (make_linear2d(2.0), [1.0, 1.0], [1.0, 1.0]),
    (make_davis_skodje(3.0), [0.0, 0.0], [0.0, 0.0]),
    (make_linear2d(2.0), [1.0, -1.0], [9.0, -9.0]),
])
def test_second_derivative(model, z, expected):
    np.testing.assert_allclose(second_derivative(model, z), expected, atol=1e-14)


@pytest.mark.parametrize("z", [[0.3, 0.2], [2.0, 0.5], [4.0, 1.5]])
def test_second_derivative_matches_jets(z):
    model = make_davis_skodje(3.0)
    np.testing.assert_allclose(second_derivative(model, z), time_derivatives(model, z, 2)[2],
                               rtol=1e-12, atol=1e-12)


def test_first_derivative_is_rhs():
    model = make_davis_skodje(5.0)
    z = [1.7, 0.2]
    np.testing.assert_array_equal(time_derivatives(model, z, 1)[1], model.S(z))


def test_flow_curvature_on_eigenvectors():
    model = make_linear2d(2.0)
    assert flow_curvature_det(model, [1.0, 1.0]) == pytest.approx(0.0, abs=1e-14)
    assert flow_curvature_det(model, [1.0, -1.0]) == pytest.approx(0.0, abs=1e-13)


def test_flow_curvature_off_eigenvectors():
    model = make_linear2d(2.0)
    A = model.matrix
    z = np.array([2.0, 1.0])
    a1, a2 = A @ z, A @ A @ z
    expected = a1[0] * a2[1] - a1[1] * a2[0]
    assert expected != 0.0
    assert flow_curvature_det(model, z) == pytest.approx(expected, rel=1e-13)


def test_flow_curvature_changes_sign_across_manifold():
    model = make_davis_skodje(3.0)
    above = flow_curvature_det(model, [2.0, 2.0 / 3.0 + 0.1])
    below = flow_curvature_det(model, [2.0, 2.0 / 3.0 - 0.1])
    assert above != 0.0 and below != 0.0
    assert np.sign(above) != np.sign(below)


@pytest.mark.parametrize("model", [make_linear2d(1.5), make_linear3d(2.0, 4.0)])
def test_flow_curvature_is_multilinear(model):
    z = np.arange(1.0, model.n + 1.0) * np.array([1.0, -0.4, 0.7][:model.n])
    base = flow_curvature_det(model, z)
    for s in (2.0, -0.5, 3.0):
        assert flow_curvature_det(model, s * z) == pytest.approx(s ** model.n * base, rel=1e-12)


def test_flow_curvature_needs_plane():
    with pytest.raises(ModelError):
        flow_curvature_det(KineticModel(1, lambda z: [-z[0]]), [1.0])


@pytest.mark.parametrize("gamma", [0.5, 2.0, 7.0])
def test_linear_powers(gamma):
    A = make_linear2d(gamma).matrix
    for m in range(1, 9):
        np.testing.assert_allclose(linear_matrix_power(gamma, m), np.linalg.matrix_power(A, m),
                                   rtol=1e-13, atol=1e-13)


def test_power_diagonal_polynomial():
    # (-1)^m (1 + m/2 g + ... + 1/2 g^m) written out for m = 1, 2, 3
    for g in (0.3, 1.0, 4.0):
        assert linear_power_diagonal(g, 1) == pytest.approx(-(1 + g / 2))
        assert linear_power_diagonal(g, 2) == pytest.approx(1 + g + g * g / 2)
        assert linear_power_diagonal(g, 3) == pytest.approx(-(1 + 1.5 * g + 1.5 * g * g + g ** 3 / 2))


def _fd_derivative(model, z, k, h):
    """k-th derivative from symmetric samples of integrated trajectories."""
    opts = IvpOptions(rel_tol=1e-13, abs_tol=1e-15)
    pts = {}
    for j in range(-k, k + 1):
        pts[j] = z if j == 0 else integrate(model, z, 0.0, j * h, opts).final
    coeffs = {2: {-1: 1, 0: -2, 1: 1}, 3: {-2: -0.5, -1: 1, 1: -1, 2: 0.5}}[k]
    return sum(c * pts[j] for j, c in coeffs.items()) / h ** k


@pytest.mark.parametrize("k", [2, 3])
def test_jets_match_richardson_differences(k):
    model = make_davis_skodje(3.0)
    z = np.array([1.2, 0.4])
    exact = time_derivatives(model, z, k)[k]
    h = 0.02
    coarse, fine = _fd_derivative(model, z, k, h), _fd_derivative(model, z, k, h / 2)
    extrapolated = (4.0 * fine - coarse) / 3.0
    np.testing.assert_allclose(extrapolated, exact, rtol=1e-5, atol=1e-5)


def test_rhs_must_compose_over_jets():
    def rhs(z):
        return [math.exp(-float(z[0])), -z[1]]

    with pytest.raises(ModelError):
        time_derivatives(KineticModel(2, rhs, jacobian=lambda z: np.eye(2)), [1.0, 1.0], 3)


def test_order_validation():
    with pytest.raises(ModelError):
        time_derivatives(make_linear2d(1.0), [1.0, 1.0], 0)
