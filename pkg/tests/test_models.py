import math

import numpy as np
import pytest

from simkit import ModelError, Polyhedron, RpvSpec, make_davis_skodje, make_linear2d, make_linear3d
from simkit.methods import analytic_sim_point
from simkit.models import KineticModel, make_model

SQ2 = math.sqrt(2.0)


@pytest.mark.parametrize("z, expected", [((1.0, 1.0), (-1.0, -1.0)), ((1.0, -1.0), (-3.0, 3.0))])
def test_linear2d_rhs_on_eigenvectors(z, expected):
    np.testing.assert_allclose(make_linear2d(2.0).S(z), expected, atol=1e-15)


def test_linear2d_sim_point_has_no_fast_amplitude():
    np.testing.assert_allclose(make_linear2d(2.0).analytic.fit_constants(np.array([5.0, 5.0]), 0.0),
                               [5.0, 0.0], atol=1e-15)


def test_davis_skodje_rhs_on_sim():
    s = make_davis_skodje(3.0).S([2.0, 2.0 / 3.0])
    np.testing.assert_allclose(s, [-2.0, -2.0 / 9.0], atol=1e-15)


def test_davis_skodje_equilibrium_and_fit():
    model = make_davis_skodje(3.0)
    np.testing.assert_array_equal(model.S([0.0, 0.0]), [0.0, 0.0])
    np.testing.assert_allclose(model.analytic.fit_constants(np.array([2.0, 2.0 / 3.0]), 0.0),
                               [2.0, 0.0], atol=1e-15)


def test_linear3d_slow_mode():
    model = make_linear3d(2.0, 4.0)
    z = np.array([1.0, SQ2, 1.0])
    np.testing.assert_allclose(model.S(z), -z, atol=1e-14)
    np.testing.assert_allclose(model.analytic.fit_constants(z, 0.0), [1.0, 0.0, 0.0], atol=1e-15)
    assert model.analytic.sim_map(np.array([1.0, 1.0]))[0] == pytest.approx(SQ2, abs=1e-15)


@pytest.mark.parametrize("g1, g2", [(2.0, 4.0), (4.0, 2.0), (1.0, 1.0)])
def test_linear3d_spectrum(g1, g2):
    eig = np.sort(np.linalg.eigvals(make_linear3d(g1, g2).matrix).real)
    np.testing.assert_allclose(eig, np.sort([-1.0, -1.0 - g1, -1.0 - g2]), atol=1e-12)


@pytest.mark.parametrize("factory, bad", [
    (make_linear2d, 0.0), (make_linear2d, -1.0),
    (make_davis_skodje, 1.0), (make_davis_skodje, 0.5),
])
def test_invalid_parameters_rejected(factory, bad):
    with pytest.raises(ModelError):
        factory(bad)


def test_linear3d_invalid_parameters():
    with pytest.raises(ModelError):
        make_linear3d(1.0, 0.0)


def test_make_model_by_name():
    assert make_model("davis-skodje", gamma=3.0).name == "davis_skodje"
    assert make_model("linear3d", gamma1=2, gamma2=4).n == 3
    with pytest.raises(ModelError):
        make_model("brusselator", gamma=1.0)
    with pytest.raises(ModelError):
        make_model("linear2d")


@pytest.mark.parametrize("model, rpv, expected", [
    (make_linear2d(2.0), RpvSpec((1,), (5.0,)), (5.0, 5.0)),
    (make_davis_skodje(3.0), RpvSpec((0,), (2.0,)), (2.0, 2.0 / 3.0)),
    (make_linear3d(2.0, 4.0), RpvSpec((0, 2), (0.0, 0.0)), (0.0, 0.0, 0.0)),
])
def test_analytic_sim_point(model, rpv, expected):
    np.testing.assert_allclose(analytic_sim_point(model, rpv).state, expected, atol=1e-15)


def test_analytic_sim_point_needs_bundle():
    model = KineticModel(2, lambda z: [-z[0], -2.0 * z[1]])
    with pytest.raises(ModelError):
        analytic_sim_point(model, RpvSpec((0,), (1.0,)))


@pytest.mark.parametrize("model", [make_linear2d(2.0), make_davis_skodje(3.0), make_linear3d(2.0, 4.0)])
def test_solution_satisfies_ode(model):
    rng = np.random.default_rng(3)
    h = 1e-5
    for _ in range(5):
        c = rng.uniform(0.2, 2.0, model.n)
        t = rng.uniform(-1.0, 1.0)
        sol = model.analytic.solution
        dz = (sol(c, t + h) - sol(c, t - h)) / (2 * h)
        np.testing.assert_allclose(dz, model.S(sol(c, t)), rtol=1e-6, atol=1e-6)


def test_sim_tangency():
    lin = make_linear2d(3.0)
    for s in np.linspace(-3.0, 3.0, 7):
        S = lin.S([s, s])
        assert S[0] == S[1]
    ds = make_davis_skodje(3.0)
    for z1 in np.linspace(0.0, 4.0, 9):
        S = ds.S([z1, z1 / (1.0 + z1)])
        assert abs(S[1] - S[0] / (1.0 + z1) ** 2) <= 1e-12


def test_jet_jacobian_matches_explicit():
    ds = make_davis_skodje(3.0)
    auto = KineticModel(2, ds.rhs)
    for z in ([0.3, 0.1], [2.0, 0.7], [5.0, -1.0]):
        np.testing.assert_allclose(auto.J(z), ds.J(z), atol=1e-13)


def test_polyhedron_membership():
    poly = Polyhedron.from_lines(-2.0, 122.0, -0.25, 111.0)
    assert poly.contains([1.0, 1.0])
    assert not poly.contains([-1e-6, 1.0])
    assert poly.contains([-1e-11, 1.0])
    assert not poly.contains([200.0, 1.0])
    np.testing.assert_allclose(poly.violation([0.0, 0.0]), [0.0, 0.0, -122.0, -111.0])


@pytest.mark.parametrize("args", [((0, 0), (1.0, 2.0)), ((0,), (1.0, 2.0)), ((-1,), (1.0,)), ((), ())])
def test_rpv_validation(args):
    with pytest.raises(ModelError):
        RpvSpec(*args)


def test_rpv_horizon_must_precede_anchor():
    with pytest.raises(ModelError):
        RpvSpec((1,), (5.0,), 0.0, 1.0)
    with pytest.raises(ModelError):
        RpvSpec((0, 1), (1.0, 1.0)).free_indices(2)
