import numpy as np
import pytest

from conftest import winfree
from syncstab import linform as lf
from syncstab import manifold as mf
from syncstab.errors import KernelViolation, NotConverged, OrbitMisaligned, RadiusExceeded
from syncstab.model import MeanFieldModel, check_hypotheses


@pytest.fixture(scope="module")
def chart(orbit_random):
    return mf.mu_chart(orbit_random.model, orbit_random.X_star, horizon=12.0)


@pytest.fixture(scope="module")
def covector(orbit_random):
    return mf.kernel_covector(orbit_random.model, orbit_random.X_star)


def test_zeta_two_assemblies_agree(chart):
    ts = np.linspace(0.0, 12.0, 37)
    assert np.allclose(chart.zeta_at_t(ts), chart.zeta_from_U(ts), atol=1e-13)


def test_chart_time_inversion(chart):
    for t in (0.5, 3.3, 11.0):
        assert chart.tau_of_mu(float(chart.mu_of_t(t))) == pytest.approx(t, abs=1e-12)
    with pytest.raises(ValueError):
        chart.tau_of_mu(chart.mu_range[1] + 1.0)


def test_transformed_system_reproduces_linearization(chart):
    assert mf.transformed_equivalence(chart, np.array([1.0, -0.5, 0.2, 0.0, 0.3]), 6.0) < 1e-7


def test_epsilon_bound_finite_only_when_dispersion_small(chart):
    assert np.isfinite(chart.epsilon_bound)
    assert chart.zeta_norm <= chart.epsilon_bound
    wide = mf.mu_chart(winfree(), 0.02 * np.arange(5), horizon=4.0)
    hyp = check_hypotheses(winfree())
    assert hyp.lipschitz_L * wide.dispersion > hyp.alpha
    assert np.isinf(wide.epsilon_bound)


def test_velocity_solves_variational_equation(orbit_random):
    assert mf.velocity_residual(orbit_random.model, orbit_random.X_star, 5.0) < 1e-8


def test_diagonal_alpha_matches_hypotheses():
    m = winfree()
    assert mf.diagonal_alpha(m) == pytest.approx(check_hypotheses(m).alpha, abs=1e-12)


def test_covector_normalized_on_velocity(orbit_random, covector):
    V = orbit_random.model.field(orbit_random.X_star)
    assert covector @ V == pytest.approx(1.0, abs=1e-12)


def test_covector_matches_projection_oracle(orbit_random, covector):
    m, X = orbit_random.model, orbit_random.X_star
    Y = np.array([0.3, -1.0, 0.5, 0.2, 0.9])
    oracle = mf.linear_form_projection(m, X, Y, 160.0)
    assert covector @ Y == pytest.approx(oracle, abs=1e-8)


def test_covector_matches_chart_route(orbit_random, covector):
    m, X = orbit_random.model, orbit_random.X_star
    Y = np.array([0.3, -1.0, 0.5, 0.2, 0.9])
    slow = mf.linear_form_nonlinear(m, X, Y, method="chart")
    assert covector @ Y == pytest.approx(slow, abs=1e-7)


def test_covector_on_diagonal_is_scaled_psi():
    m = winfree()
    s = 0.3
    ell = mf.kernel_covector(m, np.full(5, s))
    Fd = m.diagonal_profile(s)[0]
    psi_ell = lf.psi_covector(mf.diagonal_system(m, s))
    assert np.allclose(ell, psi_ell / Fd, atol=1e-8)


def test_covectors_batch_matches_single(orbit_random, covector):
    m, X = orbit_random.model, orbit_random.X_star
    batch = mf.kernel_covectors(m, np.stack([X, X + 0.01 * np.arange(5)]))
    assert np.allclose(batch[0], covector, atol=1e-10)


def test_kernel_basis_orthonormal(orbit_random, covector):
    Q = mf.kernel_basis(orbit_random.model, orbit_random.X_star, covector=covector)
    assert Q.shape == (4, 5)
    assert np.allclose(Q @ Q.T, np.eye(4), atol=1e-12)
    assert np.allclose(Q @ covector, 0.0, atol=1e-12)


def test_uncoupled_chart_is_translation():
    m = MeanFieldModel(4, omega=1.2)
    X = np.array([0.0, 0.1, 0.3, 0.2])
    xi = np.array([1e-3, -2e-3, 0.5e-3, 0.5e-3])
    assert np.allclose(mf.stable_chart(m, X, xi), X + xi, atol=1e-15)


def test_chart_guards_and_origin(orbit_random, covector):
    chart = mf.StableChart(orbit_random.model, orbit_random.X_star, covector,
                           mf.kernel_basis(orbit_random.model, orbit_random.X_star, covector=covector),
                           steps=2)
    assert np.allclose(chart(np.zeros(5)), orbit_random.X_star, atol=1e-15)
    with pytest.raises(KernelViolation):
        chart(1e-3 * np.eye(5)[0])
    with pytest.raises(RadiusExceeded):
        chart(chart.project(np.eye(5)[0]))


def test_chart_is_tangent_to_kernel(orbit_random, covector):
    m, X = orbit_random.model, orbit_random.X_star
    chart = mf.build_stable_chart(m, X, steps=2)
    xi = chart.project(np.array([1.0, -0.4, 0.2, 0.0, 0.5]))
    xi = 1e-3 * xi / np.linalg.norm(xi)
    # z(xi) - X - xi is second order in |xi|
    assert np.linalg.norm(chart(xi) - X - xi) < 1e-5


def test_translate_control_is_neutral(orbit_h0):
    m, X = orbit_h0.model, orbit_h0.X_star
    res = mf.verify_contraction(m, X, X + 1e-3, 30.0, strobe_period=orbit_h0.period)
    assert abs(res.fitted_rate) < 1e-3
    with pytest.raises(ValueError):
        mf.verify_contraction(m, X, X, 1.0)


def test_limit_cycle_convergence(orbit_h0):
    m, X = orbit_h0.model, orbit_h0.X_star
    start = X + 0.01 * np.array([1.0, -1.0, 0.5, -0.5, 0.0])
    res = mf.limit_cycle_convergence(m, orbit_h0, start, 60.0)
    alpha = check_hypotheses(m).alpha
    assert res.fitted_rate == pytest.approx(-alpha, abs=0.01)
    same = mf.limit_cycle_convergence(m, orbit_h0, X, 5.0, align=False)
    assert same.distances.max() < 1e-8


def test_limit_cycle_misaligned_start(orbit_h0):
    m, X = orbit_h0.model, orbit_h0.X_star
    shifted = mf.limit_cycle_convergence(m, orbit_h0, X + 1.0, 5.0, align=False)
    assert np.allclose(shifted.distances, np.sqrt(5), atol=1e-8)
    # alignment works modulo the diagonal shift, so X + 1 is the same point
    assert mf.limit_cycle_convergence(m, orbit_h0, X + 1.0, 5.0).distances.max() < 1e-6
    # X + 1/2 lies on the diagonal orbit itself; a transverse offset does not
    assert mf.limit_cycle_convergence(m, orbit_h0, X + 0.5, 5.0).distances[0] < 1e-6
    with pytest.raises(OrbitMisaligned):
        mf.limit_cycle_convergence(m, orbit_h0, X + 0.2 * np.array([1.0, -1, 0, 0, 0]), 5.0)


def test_contraction_csv(orbit_h0, tmp_path):
    m, X = orbit_h0.model, orbit_h0.X_star
    res = mf.verify_contraction(m, X, X + 1e-3 * np.array([1, -1, 0, 0, 0.0]), 5.0)
    path = tmp_path / "c.csv"
    mf.write_contraction_csv(res, path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 0], res.times)
    assert np.allclose(np.exp(data[:, 1]), res.distances, rtol=1e-15)


def test_chart_richardson_check(orbit_random, monkeypatch):
    m, X = orbit_random.model, orbit_random.X_star
    chart = mf.build_stable_chart(m, X, steps=2)
    xi = chart.project(np.array([0.5, 1.0, -0.3, 0.2, -0.6]))
    xi = 1e-3 * xi / np.linalg.norm(xi)
    chart(xi)
    assert chart.richardson_error < 1e-9
    monkeypatch.setattr(mf, "CHART_TOL", 0.0)
    with pytest.raises(NotConverged):
        chart(xi)
