import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import eig, expm

from syncstab import linform as lf
from syncstab.errors import BetaOutOfRange, CertificationFailed, HstabViolated
from syncstab.model import TrigSeries


def floquet_psi_covector(sys):
    """Left eigenvector of the monodromy for the multiplier 1, normalized by psi(1) = 1."""
    M = lf.fundamental_R(sys, sys.t_prime, sys.t_prime + 1.0)
    w, vl = eig(M, left=True, right=False)
    k = int(np.argmin(np.abs(w - 1.0)))
    ell = np.real(vl[:, k])
    return ell / ell.sum()


def test_constant_psi_is_the_weighted_mean():
    # b = -1 with unequal constant a: the left null vector of -I + 1 a^T is a
    a = np.array([0.2, 0.5, 0.3])
    sys = lf.PerturbedLinearSystem(3, TrigSeries(-1.0), tuple(TrigSeries(x) for x in a),
                                   lf.ZetaSpec.zero(3))
    Y = np.array([1.0, -2.0, 0.5])
    assert lf.psi(sys, Y).value == pytest.approx(a @ Y, abs=1e-9)


def test_fundamental_matrix_constant_case():
    sys = lf.constant_system(3)
    M = -np.eye(3) + np.full((3, 3), 1.0 / 3)
    assert np.allclose(lf.fundamental_R(sys, 0.0, 1.3), expm(1.3 * M), atol=1e-10)


def test_h_integral_constant_case():
    # on the constant system only the W-forcing survives: 1 - e^{-1}
    assert lf.h_integral(lf.constant_system(3), 0.0, 1.0).value == pytest.approx(1 - np.exp(-1), abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_psi_matches_floquet_projection(seed):
    sys = lf.random_periodic_system(3, seed)
    ell = floquet_psi_covector(sys)
    assert np.allclose(lf.psi_covector(sys), ell, atol=1e-7)


def test_period_map_matches_direct_integration():
    sys = lf.random_periodic_system(3, 11, D=0.04)
    assert sys.periodic
    direct = lf.random_periodic_system(3, 11, D=0.04)
    object.__setattr__(direct, "_frame", None)
    assert not direct.periodic
    Y = np.array([0.4, -1.2, 0.7])
    a = lf.psi(sys, Y, horizon=40.0)
    b = lf.psi(direct, Y, horizon=40.0)
    assert np.allclose(a.approximants, b.approximants, atol=1e-9)


def test_psi_symmetric_in_N():
    Y2 = np.array([0.3, 0.9])
    Y5 = np.array([0.6, 0.6, 0.2, 1.0, 0.6])
    assert lf.psi(lf.constant_system(2), Y2).value == pytest.approx(
        lf.psi(lf.constant_system(5), Y5).value, abs=1e-9)


@settings(max_examples=4, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(-3, 3))
def test_psi_linear(Y1, Y2, c):
    sys = lf.random_periodic_system(3, 11, D=0.03)
    Y1, Y2 = np.array(Y1), np.array(Y2)
    lhs = lf.psi(sys, Y1 + c * Y2).value
    rhs = lf.psi(sys, Y1).value + c * lf.psi(sys, Y2).value
    assert lhs == pytest.approx(rhs, abs=1e-6 * (1 + np.abs(Y1).max() + abs(c) * np.abs(Y2).max()))


def test_psi_of_ones_is_one():
    sys = lf.random_periodic_system(4, 3, D=0.05)
    assert lf.psi(sys, np.ones(4)).value == pytest.approx(1.0, abs=1e-8)


def test_psi_invariant_along_flow_for_normalizing_zeta():
    sys = lf.random_periodic_system(3, 5, D=0.05, zeta_kind="normalizing-trig")
    Y = np.array([0.4, -1.0, 2.0])
    assert lf.psi_invariance_check(sys, Y, 0.0, 3.0) < 1e-8


def test_form_L_reduces_to_psi_without_zeta():
    sys = lf.random_periodic_system(3, 8)
    Y = np.array([1.0, 0.2, -0.7])
    assert lf.linear_form_L(sys, Y, np.ones(3)) == pytest.approx(lf.psi(sys, Y).value, abs=1e-8)


def test_form_L_invariant_and_normalizing_solution_found():
    sys = lf.random_periodic_system(3, 9, D=0.05)
    V = lf.normalizing_solution(sys)
    assert V.inf_norm > 0.1 and V.sup_norm < 10
    Y = np.array([0.5, -0.2, 1.1])
    assert lf.form_invariance_check(sys, Y, V.V0, 0.0, 2.5) < 1e-7
    assert lf.linear_form_L(sys, V.V0, V.V0) == pytest.approx(1.0, abs=1e-10)


def test_decompose_identity_and_rate_balanced():
    sys = lf.balanced_system(3)
    Y = np.array([1.0, 2.0, -0.5])
    res = lf.decompose(sys, Y)
    assert res.identity_residual < 1e-9
    assert res.psi_value == pytest.approx(Y.mean(), abs=1e-8)
    # pointwise balanced: the stable part decays exactly like exp(int b) with b of mean -1
    assert res.fitted_beta == pytest.approx(1.0, abs=1e-6)
    assert res.certified


def test_decompose_normalizing_mode():
    sys = lf.random_periodic_system(3, 4, D=0.04)
    res = lf.decompose(sys, np.array([0.3, 0.1, -0.4]), mode="normalizing")
    assert res.identity_residual < 1e-8 and res.certified


def test_large_zeta_fails_certification():
    sys = lf.constant_system(3, lf.ZetaSpec.random_trig(3, 8.0, 0))
    Y = np.random.default_rng(0).normal(size=3)
    with pytest.raises(CertificationFailed):
        lf.decompose(sys, Y, strict=True)


def test_d_star_bracket_constant_system():
    d_star = lf.d_star_search(lf.constant_system(3), D_max=8.0, iters=4)
    assert 0.5 < d_star < 8.0


def test_hstab_violation_detected():
    sys = lf.PerturbedLinearSystem(2, TrigSeries(-1.0), (TrigSeries(0.2), TrigSeries(0.2)),
                                   lf.ZetaSpec.zero(2))
    with pytest.raises(HstabViolated):
        lf.check_Hstab(sys)
    zero_alpha = lf.PerturbedLinearSystem(2, TrigSeries(0.0, {1: 1.0}), (TrigSeries(0.0),) * 2,
                                          lf.ZetaSpec.zero(2))
    with pytest.raises(HstabViolated):
        lf.psi(zero_alpha, np.ones(2))


def test_delta_constant_case():
    rep = lf.delta_report(lf.constant_system(2), 0.5, 1.0, 1.0)
    assert rep.max_delta == pytest.approx(2.0, abs=1e-12)
    assert rep.D0 == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(BetaOutOfRange):
        lf.delta_periodic(lf.constant_system(2), 1.0, 1.0, 1.0, 0.0)


def test_delta_matches_long_integration():
    sys = lf.random_periodic_system(2, 17)
    alpha = lf.check_Hstab(sys).alpha
    beta, D, L = 0.5 * alpha, 0.3, 2.0
    # any solution converges to the periodic one; integrate 60 periods from zero
    sol = solve_ivp(lambda t, d: (sys.b(t) + beta) * d + D * L, (0.0, 60.25), [0.0],
                    rtol=1e-12, atol=1e-14, dense_output=True)
    for t in (60.0, 60.1, 60.25):
        assert sol.sol(t)[0] == pytest.approx(lf.delta_periodic(sys, beta, D, L, t), rel=1e-8)


def test_zeta_config_kinds():
    assert lf.ZetaSpec.from_config({"kind": "zero"}, 2).norm() == 0.0
    z = lf.ZetaSpec.from_config({"kind": "random-trig", "D": 0.3, "seed": 1}, 3)
    assert z.norm() == pytest.approx(0.3, rel=1e-2)
    n = lf.ZetaSpec.random_trig(3, 0.3, 1, normalizing=True)
    assert np.allclose(n(0.37).sum(axis=1), 0.0, atol=1e-14)
    with pytest.raises(ValueError):
        lf.ZetaSpec.from_config({"kind": "noise"}, 2)
