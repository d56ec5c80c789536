import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from syncstab import model as md
from syncstab.errors import NonPeriodicUnbounded
from syncstab.model import MeanFieldModel, PerturbationSpec, TrigSeries

KAPPA = 0.05


def winfree_diag(s, kappa=KAPPA):
    """F(s1, s) and the own-phase partial, written out by hand."""
    I = 1.0 + np.cos(2 * np.pi * s)
    return 1.0 - kappa * I * np.sin(2 * np.pi * s), -2 * np.pi * kappa * I * np.cos(2 * np.pi * s)


def test_alpha_matches_independent_quadrature():
    rep = md.check_hypotheses(MeanFieldModel(5, kappa=KAPPA))
    oracle, _ = quad(lambda s: winfree_diag(s)[1] / winfree_diag(s)[0], 0.0, 1.0, epsabs=1e-13)
    assert rep.h_star_integral == pytest.approx(oracle, abs=1e-10)
    # frozen value of the oracle
    assert rep.alpha == pytest.approx(0.15742, abs=5e-6)
    assert rep.zero_sum_residual < 1e-10
    assert rep.satisfied == {"H": True, "H_star": True}


def test_min_diagonal_field_matches_grid():
    grid = np.linspace(0.0, 1.0, 2_000_001)
    oracle = winfree_diag(grid)[0].min()
    got = md.min_diagonal_field(MeanFieldModel(5, kappa=KAPPA))
    assert got == pytest.approx(oracle, abs=1e-10)
    assert got == pytest.approx(0.93505, abs=5e-6)


def test_uncoupled_fails_strict_hypothesis():
    rep = md.check_hypotheses(MeanFieldModel(5, kappa=0.0))
    assert rep.satisfied["H"] and not rep.satisfied["H_star"]


def test_jacobian_against_finite_differences():
    m = MeanFieldModel(4, kappa=0.3, perturbation=PerturbationSpec("random-trig", 0.05, 1))
    X = np.random.default_rng(0).uniform(0, 1, 4)
    h = 1e-6
    fd = np.column_stack([(m.field(X + h * e) - m.field(X - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.allclose(m.jacobian(X), fd, atol=1e-8)


def test_hessian_against_finite_differences():
    m = MeanFieldModel(3, kappa=0.2)
    rng = np.random.default_rng(1)
    X, x = rng.uniform(0, 1, 3), 0.37
    h = 1e-5

    def grad(y):
        return np.concatenate([m.dF_dX(y[:3], y[3]), [m.dF_dx(y[:3], y[3])]])

    y = np.concatenate([X, [x]])
    fd = np.column_stack([(grad(y + h * e) - grad(y - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.allclose(m.hessian(X, x), fd, atol=1e-7)


def test_local_agrees_with_separate_calls():
    m = MeanFieldModel(5, kappa=KAPPA, perturbation=PerturbationSpec("random-trig", 0.01, 3))
    X = np.random.default_rng(2).uniform(0, 1, 5)
    mu = 0.41
    field, J, F_mu, b, a = m.local(X, mu)
    b_ref, a_ref = md.coefficients_ab(m, mu)
    assert np.allclose(field, m.field(X), atol=1e-15)
    assert np.allclose(J, m.jacobian(X), atol=1e-15)
    assert F_mu == pytest.approx(m.F(X, mu), abs=1e-15)
    assert b == pytest.approx(b_ref, abs=1e-14)
    assert np.allclose(a, a_ref, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.integers(-3, 3))
def test_field_diagonally_periodic(X, k):
    m = MeanFieldModel(4, kappa=0.2, perturbation=PerturbationSpec("random-trig", 0.05, 7))
    X = np.array(X)
    assert np.allclose(m.field(X + k), m.field(X), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=5, max_size=5), st.permutations(range(5)))
def test_unperturbed_field_permutation_equivariant(X, perm):
    m = MeanFieldModel(5, kappa=0.4)
    X = np.array(X)
    perm = list(perm)
    assert np.allclose(m.field(X[perm]), m.field(X)[perm], atol=1e-14)


def test_random_perturbation_bounded_by_r():
    r = 0.02
    pert = PerturbationSpec("random-trig", r, 5, one_periodic=False)
    m = MeanFieldModel(4, perturbation=pert)
    H, dH = md.perturbation_norms(m)
    assert H <= r and dH <= r


def test_non_periodic_perturbation_breaks_diagonal_shift():
    pert = PerturbationSpec("random-trig", 0.02, 5, one_periodic=False)
    m = MeanFieldModel(3, perturbation=pert)
    X = np.array([0.1, 0.2, 0.3])
    assert not np.allclose(m.field(X + 1.0), m.field(X))


def test_seminorm_of_known_functions():
    assert md.seminorm_B(lambda y: np.sin(2 * np.pi * y[:, 0]), 2) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(NonPeriodicUnbounded):
        md.seminorm_B(lambda y: y[:, 0], 2, periodic=False)
    with pytest.raises(ValueError):
        md.seminorm_B(lambda y: y[:, 0], 2, samples=10)


def test_trig_series_calculus():
    f = TrigSeries(0.3, {1: 0.5, 3: -0.2}, {2: 0.7})
    val, _ = quad(f, 0.2, 1.7)
    assert f.integral(0.2, 1.7) == pytest.approx(val, abs=1e-12)
    h = 1e-6
    assert f.derivative(0.4) == pytest.approx((f(0.4 + h) - f(0.4 - h)) / (2 * h), abs=1e-6)
    v, dv = f.value_and_slope(0.4)
    assert v == pytest.approx(f(0.4)) and dv == pytest.approx(f.derivative(0.4))
    g = TrigSeries.from_spec(f.to_spec())
    t = np.linspace(0, 1, 11)
    assert np.array_equal(g(t), f(t))


def test_model_config_round_trip():
    m = MeanFieldModel(3, kappa=0.1, perturbation=PerturbationSpec("random-trig", 0.01, 2))
    m2 = md.model_from_config(m.to_dict())
    X = np.array([0.1, 0.5, 0.9])
    assert np.array_equal(m.field(X), m2.field(X))
    with pytest.raises(ValueError):
        MeanFieldModel(3, family="kuramoto")
