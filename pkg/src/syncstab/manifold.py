"""Linearization along orbits, the mean-phase chart and local stable manifolds.

Along an orbit ``X(t)`` with mean phase ``mu' = F(X, mu)``, the variational
equation ``Y' = J(t) Y`` read in the time ``mu`` becomes

    dY*/dmu = [b(mu) I + A(mu) + zeta_Z(mu)] Y*

with ``b = d_{N+1}F(mu 1, mu) / F(mu 1, mu)``, ``a_j = d_jF(mu 1, mu) / F(mu 1, mu)``
and ``zeta_Z = J / mu' - (b I + A)``.  The velocity ``V_Z(t) = d/dt Phi^t(Z)``
is a bounded solution, so the linear form ``L`` normalized by ``V_Z(t0)``
gives the asymptotic-phase covector; its kernel is the tangent space of
the local stable manifold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import linform, ode
from .errors import (KernelViolation, NotConverged, OrbitMisaligned, PsiVanishing,
                     RadiusExceeded)
from .model import check_hypotheses, coefficients_ab
from .sync import flow, flow_with_mean_phase

KERNEL_TOL = 1e-8
# chart stages only need L(xi) to ~1e-12 for |xi| ~ 1e-3; 1e-7 solver tolerance gives
# covector errors below 1e-9 at a third of the cost of the default
STAGE_CFG = ode.IntegratorConfig(abs_tol=1e-7, rel_tol=1e-7)
COVECTOR_CFG = ode.IntegratorConfig(abs_tol=1e-9, rel_tol=1e-9)
CHART_TOL = 1e-6


def jacobian_along(model, Z, t, cfg=ode.DEFAULT):
    """``dF(Phi^t(Z))``."""
    Z = np.asarray(Z, dtype=float)
    X = Z if t == 0 else flow(model, Z, 0.0, t, cfg).final
    return model.jacobian(X)


def variational_S(model, Z, t0, t1, cfg=ode.DEFAULT, t_eval=None):
    """``S_Z(t; t0) = d Phi^{t - t0}(Z)`` with identity start."""
    _, S = ode.integrate_variational(lambda t, y: model.field(y),
                                     lambda t, y: model.jacobian(y),
                                     np.asarray(Z, dtype=float), t0, t1, cfg, t_eval)
    return S


def velocity_residual(model, Z, T, cfg=ode.DEFAULT, n=64):
    """Relative gap between ``S(t) V_Z(0)`` and ``V_Z(t)`` on a grid of ``[0, T]``."""
    Z = np.asarray(Z, dtype=float)
    N = model.N

    def rhs(t, w):
        X, Y = w[:N], w[N:]
        return np.concatenate([model.field(X), model.jacobian(X) @ Y])

    grid = np.linspace(0.0, T, n + 1)[1:]
    traj = ode.integrate(rhs, np.concatenate([Z, model.field(Z)]), 0.0, T, cfg, grid[:-1])
    st = np.array([traj.at(t) for t in grid])
    V = model.field(st[:, :N])
    return float(np.max(np.linalg.norm(st[:, N:] - V, axis=1) / np.linalg.norm(V, axis=1)))


def diagonal_alpha(model, n=1024):
    """``alpha = -int_0^1 b(mu) dmu`` for the diagonal coefficients."""
    return -ode.quadrature(lambda s: coefficients_ab(model, s)[0], 0.0, 1.0, n)


def _uncoupled(model):
    return model.kappa == 0 and model.perturbation.is_zero


# --- the mean-phase chart ---------------------------------------------

class _ChartZeta:
    """``zeta_Z`` as a function of ``mu``, with a sampled sup norm."""

    def __init__(self, chart):
        self.chart = chart

    def __call__(self, mu):
        return self.chart.zeta_at_t(self.chart.tau_of_mu(mu))

    def norm(self):
        return self.chart.zeta_norm


@dataclass
class MuChart:
    model: object
    Z: np.ndarray
    mu0: float
    horizon: float
    trajectory: ode.Trajectory = field(repr=False)
    zeta_norm: float = float("nan")
    theta_max: float = float("nan")
    dispersion: float = float("nan")
    theta_bound: float = float("nan")
    epsilon_bound: float = float("nan")

    # orbit-side quantities, all as functions of t
    def X(self, t):
        return self.trajectory.dense(t)[..., :-1]

    def mu_of_t(self, t):
        return self.trajectory.dense(t)[..., -1]

    def mu_dot(self, t):
        w = self.trajectory.dense(t)
        return self.model.F(w[..., :-1], w[..., -1])

    def tau_of_mu(self, mu):
        """Inverse of ``mu_of_t`` by bracketing on the knots and Brent's method."""
        knots = self.trajectory.states[:, -1]
        if not knots[0] <= mu <= knots[-1]:
            raise ValueError(f"mu={mu} outside the charted range [{knots[0]}, {knots[-1]}]")
        k = int(np.searchsorted(knots, mu))
        if k == 0 or knots[k] == mu:
            return float(self.trajectory.times[k])
        return brentq(lambda t: self.mu_of_t(t) - mu, self.trajectory.times[k - 1],
                      self.trajectory.times[k], xtol=1e-14, rtol=4 * np.finfo(float).eps)

    def b_mu(self, mu):
        return coefficients_ab(self.model, mu)[0]

    def a_mu(self, mu):
        return coefficients_ab(self.model, mu)[1]

    def theta(self, t):
        mu = self.mu_of_t(t)
        return self.model.diagonal_profile(mu)[0] / self.mu_dot(t) - 1.0

    def U_Z(self, t):
        """``J(t) - [d_{N+1}F(mu 1, mu) I + 1 (d_jF(mu 1, mu))_j]``."""
        mu = self.mu_of_t(t)
        _, dN1, dj = self.model.diagonal_profile(mu)
        U = self.model.jacobian(self.X(t)) - dj[..., None, :]
        idx = np.arange(self.model.N)
        U[..., idx, idx] -= np.asarray(dN1)[..., None]
        return U

    def zeta_at_t(self, t):
        """``zeta_Z(mu(t)) = J / mu' - (b I + A)``."""
        mu = self.mu_of_t(t)
        b, a = coefficients_ab(self.model, mu)
        Z = self.model.jacobian(self.X(t)) / np.asarray(self.mu_dot(t))[..., None, None]
        Z = Z - a[..., None, :]
        idx = np.arange(self.model.N)
        Z[..., idx, idx] -= np.asarray(b)[..., None]
        return Z

    def zeta_from_U(self, t):
        """The same matrix assembled as ``theta J / F + U / F`` (cross-check)."""
        mu = self.mu_of_t(t)
        Fd = np.asarray(self.model.diagonal_profile(mu)[0])[..., None, None]
        J = self.model.jacobian(self.X(t))
        th = np.asarray(self.theta(t))[..., None, None]
        return th * J / Fd + self.U_Z(t) / Fd

    def zeta_Z(self, mu):
        return self.zeta_at_t(self.tau_of_mu(mu))

    @property
    def mu_range(self):
        return float(self.trajectory.states[0, -1]), float(self.trajectory.states[-1, -1])

    def system(self):
        """The perturbed periodic system in the time ``mu``."""
        N = self.model.N
        b = linform.CallablePeriodic(lambda m: coefficients_ab(self.model, m)[0])
        a = tuple(linform.CallablePeriodic(lambda m, j=j: coefficients_ab(self.model, m)[1][..., j])
                  for j in range(N))
        return linform.PerturbedLinearSystem(N, b, a, _ChartZeta(self), t_prime=self.mu0,
                                             coefficients=lambda m: coefficients_ab(self.model, m))

    def velocity(self, t):
        return self.model.field(self.X(t))


def mu_chart(model, Z, horizon=None, cfg=ode.DEFAULT, mu0=None, samples_per_unit=16):
    """Build the mean-phase chart along ``Phi^t(Z)`` for ``t in [0, horizon]``.

    ``mu0`` defaults to ``mean(Z)``.  The epsilon bound uses the sampled
    distance ``D = max |x_i - mu|`` along the chart, the Lipschitz constant
    and ``alpha`` of the diagonal, and the perturbation size ``r``; it is
    infinite when ``L D >= alpha``.
    """
    Z = np.asarray(Z, dtype=float)
    hyp = check_hypotheses(model)
    alpha = hyp.alpha
    if horizon is None:
        horizon = linform.default_horizon(alpha) + 2.0
    mu0 = float(np.mean(Z)) if mu0 is None else float(mu0)
    grid = np.arange(1, int(samples_per_unit * horizon)) / samples_per_unit
    traj = flow_with_mean_phase(model, Z, mu0, 0.0, horizon, cfg, grid)
    chart = MuChart(model, Z, mu0, float(horizon), traj)
    ts = np.concatenate([[0.0], grid, [horizon]])
    st = np.array([traj.at(t) for t in ts])
    coefficients_ab(model, st[:, -1])  # raises DiagonalVanishing
    if np.any(np.diff(st[:, -1]) <= 0):
        raise NotConverged("mean phase is not increasing along the chart")
    chart.zeta_norm = float(np.max(np.abs(chart.zeta_at_t(ts))))
    chart.theta_max = float(np.max(np.abs(chart.theta(ts))))
    chart.dispersion = float(np.max(np.abs(st[:, :-1] - st[:, -1:])))
    L, D, r = hyp.lipschitz_L, chart.dispersion, model.perturbation.r
    if alpha > L * D:
        chart.theta_bound = L * D / (alpha - L * D)
        chart.epsilon_bound = (L + r) * chart.theta_bound + (r + L * D) / alpha
    else:
        chart.theta_bound = chart.epsilon_bound = float("inf")
    return chart


def transformed_equivalence(chart, Y0, t_end, cfg=ode.DEFAULT, n=16):
    """Max gap between ``Y(t)`` from the t-system and ``Y*(mu(t))`` from the mu-system."""
    model = chart.model
    N = model.N
    Y0 = np.asarray(Y0, dtype=float)

    def rhs(t, w):
        return np.concatenate([model.field(w[:N]), model.jacobian(w[:N]) @ w[N:]])

    ts = np.linspace(0.0, t_end, n + 1)[1:]
    tr = ode.integrate(rhs, np.concatenate([chart.Z, Y0]), 0.0, t_end, cfg, ts[:-1])
    mus = np.array([float(chart.mu_of_t(t)) for t in ts])
    sys = chart.system()
    tr_mu = linform.flow_columns(sys, Y0, chart.mu0, mus[-1], cfg, mus[:-1])
    gap = [np.linalg.norm(tr.at(t)[N:] - tr_mu.at(m)) for t, m in zip(ts, mus)]
    return float(np.max(gap) / np.linalg.norm(Y0))


# --- the linear form L at a base point ---------------------------------

def kernel_covectors(model, Zs, horizon=None, cfg=COVECTOR_CFG, tol=1e-9):
    """Covectors ``l`` with ``L_{mu_Z}(Y) = l @ Y`` for a batch of base points ``Zs`` (B, N).

    The auxiliary quotient system is integrated in the time ``t`` together
    with the orbit, the mean phase and ``e``: multiplying the mu-system by
    ``mu'`` turns ``mu' zeta_Z`` into ``J - mu' (b I + A)``, so no inversion
    of ``mu(t)`` is needed.  Columns: the homogeneous ``W`` start, the unit
    forcings ``e_1..e_N`` and the velocity ``V_Z(0)``.
    """
    Zs = np.atleast_2d(np.asarray(Zs, dtype=float))
    B, N = Zs.shape
    if _uncoupled(model):
        return np.full((B, N), 1.0 / (N * model.omega))
    explicit = horizon is not None
    alpha = diagonal_alpha(model)
    if not explicit:
        horizon = linform.default_horizon(alpha)
    K = N + 2
    forcing = np.zeros((B, N, K))
    forcing[:, :, 1:N + 1] = np.eye(N)
    forcing[:, :, N + 1] = model.field(Zs)
    Z0 = np.zeros((B, N + 1, K))
    Z0[:, :N, 0] = 1.0
    mu0 = Zs.mean(axis=1)
    nX, nZ = B * N, B * (N + 1) * K
    eye = np.eye(N)

    def rhs(t, w):
        X = w[:nX].reshape(B, N)
        mu = w[nX:nX + B]
        e = w[nX + B:nX + 2 * B]
        Z = w[nX + 2 * B:].reshape(B, N + 1, K)
        fX, J, md, b, a = model.local(X, mu)
        Zs_, z = Z[:, :N], Z[:, N]
        g = Zs_ + e[:, None, None] * forcing
        u = z[:, None, :] + g
        M = J - md[:, None, None] * (b[:, None, None] * eye + a[:, None, :])
        dZs = (md * b)[:, None, None] * Zs_ + M @ u
        dz = md[:, None] * ((b + a.sum(axis=1))[:, None] * z + (a[:, None, :] @ g)[:, 0])
        dZ = np.concatenate([dZs, dz[:, None, :]], axis=1)
        return np.concatenate([fX.ravel(), md, md * b * e, dZ.ravel()])

    w = np.concatenate([Zs.ravel(), mu0, np.ones(B), Z0.ravel()])
    n = int(math.floor(horizon))
    # a default horizon is only a cap: stop once the settle test below passes
    first = n if explicit else min(n, max(int(math.ceil(10.0 / alpha)), 4))
    q, m = [], 0
    while m < n:
        m_next = first if m == 0 else min(n, m + linform.EARLY_CHUNK)
        seg = np.arange(m + 1, m_next + 1, dtype=float)
        traj = ode.integrate(rhs, w, float(m), seg[-1], cfg, seg[:-1])
        for t in seg[-4:] if explicit else seg:
            Z = traj.at(t)[nX + 2 * B:].reshape(B, N + 1, K)
            q.append(Z[:, N, 1:] / Z[:, N, :1])
        w, m = traj.final, m_next
        if len(q) >= 4 and _settled(np.array(q[-4:]), tol):
            break
    q = np.array(q[-4:])
    if not _settled(q, tol):
        raise NotConverged("kernel covector quotients did not settle", sequence=q)
    qV = q[-1, :, N]
    if np.any(np.abs(qV) < 1e-10):
        raise PsiVanishing("psi of the velocity vanishes")
    return q[-1, :, :N] / qV[:, None]


def _settled(q, tol):
    return bool(np.max(np.abs(np.diff(q, axis=0))) <= tol * (1.0 + np.max(np.abs(q))))


def kernel_covector(model, Z, horizon=None, cfg=COVECTOR_CFG, tol=1e-9):
    return kernel_covectors(model, np.asarray(Z, dtype=float)[None], horizon, cfg, tol)[0]


def diagonal_system(model, s):
    """The unperturbed mu-system of the diagonal orbit through ``s 1``."""
    N = model.N
    b = linform.CallablePeriodic(lambda m: coefficients_ab(model, m)[0])
    a = tuple(linform.CallablePeriodic(lambda m, j=j: coefficients_ab(model, m)[1][..., j])
              for j in range(N))
    return linform.PerturbedLinearSystem(N, b, a, linform.ZetaSpec.zero(N), t_prime=float(s),
                                         coefficients=lambda m: coefficients_ab(model, m))


def linear_form_nonlinear(model, Z, Y, horizon=None, cfg=None, method="fast"):
    """``L_{mu_Z}(Y)``, normalized so that the velocity ``V_Z(0)`` maps to 1.

    ``method="chart"`` builds the mu-system explicitly and delegates to
    :func:`linform.linear_form_L`; ``"fast"`` uses :func:`kernel_covectors`.
    """
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if method == "fast":
        return float(kernel_covector(model, Z, horizon, cfg or COVECTOR_CFG) @ Y)
    cfg = cfg or ode.DEFAULT
    if method != "chart":
        raise ValueError(f"unknown method {method!r}")
    alpha = diagonal_alpha(model)
    h_mu = linform.default_horizon(alpha) if horizon is None else horizon
    # the t-span must cover mu0 + h_mu; mu' >= min F - r keeps this finite
    chart = mu_chart(model, Z, horizon=1.2 * h_mu + 4.0, cfg=cfg)
    return linform.linear_form_L(chart.system(), Y, model.field(Z), h_mu, cfg)


def linear_form_projection(model, Z, Y, T, cfg=ode.DEFAULT):
    """Independent estimate ``<V(T), S(T) Y> / |V(T)|^2``; error decays like ``exp(-alpha T)``."""
    Z = np.asarray(Z, dtype=float)
    flow_tr, S = ode.integrate_variational(lambda t, y: model.field(y),
                                           lambda t, y: model.jacobian(y), Z, 0.0, T, cfg)
    V = model.field(flow_tr.final)
    return float(V @ (S.final @ np.asarray(Y, dtype=float)) / (V @ V))


def kernel_basis(model, X, covector=None, **kw):
    """Orthonormal basis (rows) of ``ker L_{mu_X}``.

    Gram-Schmidt of ``e_k - L(e_k) V_X(0)`` for ``k < N``.
    """
    X = np.asarray(X, dtype=float)
    N = model.N
    ell = kernel_covector(model, X, **kw) if covector is None else covector
    V = model.field(X)
    P = np.eye(N)[:, :N - 1] - np.outer(V, ell[:N - 1])
    Q, _ = np.linalg.qr(P)
    return Q.T


# --- the stable chart ----------------------------------------------------

@dataclass
class StableChart:
    model: object
    X: np.ndarray
    covector: np.ndarray
    kernel_basis: np.ndarray
    xi_radius: float = 1e-2
    steps: int = 8
    horizon: float = None
    cfg: ode.IntegratorConfig = field(default=STAGE_CFG, repr=False)
    richardson_error: float = field(default=float("nan"), init=False)

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim == 1
        xi = np.atleast_2d(xi)
        if np.any(np.linalg.norm(xi, axis=1) > self.xi_radius):
            raise RadiusExceeded(f"|xi| exceeds xi_radius={self.xi_radius}")
        lx = xi @ self.covector
        if np.any(np.abs(lx) > KERNEL_TOL):
            raise KernelViolation(f"L(xi) = {np.max(np.abs(lx)):.3e} is not zero")
        out, err = _chart_rk4(self.model, self.X, xi, self.steps, self.horizon, self.cfg,
                              first_covector=self.covector)
        # the chart is a small correction to X + xi; check it relative to |xi|
        if err > CHART_TOL * np.max(np.linalg.norm(xi, axis=1)):
            raise NotConverged(f"chart Richardson estimate {err:.2e} too large; raise steps")
        self.richardson_error = err
        return out[0] if single else out

    def project(self, v):
        """``v - L(v) V_X(0)``: the kernel component of ``v``."""
        v = np.asarray(v, dtype=float)
        return v - np.multiply.outer(v @ self.covector, self.model.field(self.X))


def _rk4_path(z, steps, first):
    """RK4 over ``s`` in [0, 1] as a coroutine: yields stage points, receives slopes."""
    h = 1.0 / steps
    for k in range(steps):
        k1 = first if k == 0 and first is not None else (yield z)
        k2 = yield z + 0.5 * h * k1
        k3 = yield z + 0.5 * h * k2
        k4 = yield z + h * k3
        z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


def _chart_rk4(model, X, xi, steps, horizon, cfg, first_covector=None):
    """RK4 in ``s`` for ``dz/ds = xi - L_{mu_z}(xi) V_z(0)`` with ``steps`` and ``steps // 2``.

    Both runs and all ``xi`` share each covector batch.  Returns the fine
    result and the Richardson estimate ``max |z_fine - z_coarse| / 15``.
    """
    B = xi.shape[0]
    z0 = np.repeat(X[None], B, axis=0)

    def slope(zz, ell):
        return xi - np.einsum("bn,bn->b", ell, xi)[:, None] * model.field(zz)

    first = None if first_covector is None else slope(z0, np.repeat(first_covector[None], B, axis=0))
    paths = [_rk4_path(z0, steps, first)]
    if steps >= 2:
        paths.append(_rk4_path(z0, steps // 2, first))
    points = [next(p) for p in paths]
    done = [None] * len(paths)
    while any(d is None for d in done):
        live = [i for i, d in enumerate(done) if d is None]
        zz = np.concatenate([points[i] for i in live])
        ell = kernel_covectors(model, zz, horizon, cfg, tol=1e-8)
        for j, i in enumerate(live):
            rows = slice(j * B, (j + 1) * B)
            try:
                points[i] = paths[i].send(slope(zz[rows], ell[rows]))
            except StopIteration as stop:
                done[i] = stop.value
    err = float(np.max(np.abs(done[0] - done[1]))) / 15.0 if steps >= 2 else float("nan")
    return done[0], err


def build_stable_chart(model, X, xi_radius=1e-2, steps=8, horizon=None, cfg=COVECTOR_CFG,
                       stage_cfg=STAGE_CFG):
    """Covector and kernel basis at ``X`` (solver ``cfg``); chart stages use ``stage_cfg``."""
    X = np.asarray(X, dtype=float)
    ell = kernel_covector(model, X, horizon, cfg)
    basis = kernel_basis(model, X, covector=ell)
    return StableChart(model, X, ell, basis, xi_radius, steps, horizon, stage_cfg)


def stable_chart(model, X, xi, cfg=COVECTOR_CFG, xi_radius=1e-2, steps=8, horizon=None,
                 stage_cfg=STAGE_CFG):
    """``z(xi, 1)`` for ``xi`` in ``ker L_{mu_X}``; ``xi`` may be a batch (B, N)."""
    return build_stable_chart(model, X, xi_radius, steps, horizon, cfg, stage_cfg)(xi)


# --- contraction ---------------------------------------------------------

@dataclass
class ContractionResult:
    fitted_rate: float
    K_hat: float
    fit_r2: float
    times: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)

    def to_dict(self):
        return {"fitted_rate": self.fitted_rate, "K_hat": self.K_hat, "fit_r2": self.fit_r2,
                "horizon": float(self.times[-1])}


def _tail_fit(times, dist, tail, strobe_period):
    t_end = times[-1]
    if strobe_period:
        n0 = math.ceil((1.0 - tail) * t_end / strobe_period)
        n1 = math.floor(t_end / strobe_period + 1e-9)
        ts = strobe_period * np.arange(n0, n1 + 1)
        ds = np.interp(ts, times, dist)
    else:
        mask = times >= (1.0 - tail) * t_end
        ts, ds = times[mask], dist[mask]
    return linform.fit_log_linear(ts, ds)


def verify_contraction(model, X, Y, T, cfg=ode.DEFAULT, tail=0.5, strobe_period=None,
                       samples_per_unit=16):
    """Exponential rate of ``|Phi^t(X) - Phi^t(Y)|`` and the sup ratio ``K_hat``.

    The difference is integrated directly in the scaled form
    ``u = (Phi^t(Y) - Phi^t(X)) / eps`` so that it keeps full relative
    precision after many decades of decay.  ``K_hat = max_t d(t) exp(-rate t) / |X - Y|``.
    With ``strobe_period`` the tail fit uses whole periods only.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    eps = float(np.linalg.norm(Y - X))
    if eps == 0:
        raise ValueError("X and Y coincide")
    N = model.N

    def rhs(t, w):
        Xt, u = w[:N], w[N:]
        fX = model.field(Xt)
        return np.concatenate([fX, (model.field(Xt + eps * u) - fX) / eps])

    times = np.arange(0, int(samples_per_unit * T) + 1) / samples_per_unit
    traj = ode.integrate(rhs, np.concatenate([X, (Y - X) / eps]), 0.0, T, cfg, times[1:-1])
    dist = eps * np.linalg.norm(np.array([traj.at(t)[N:] for t in times]), axis=1)
    slope, _, r2 = _tail_fit(times, dist, tail, strobe_period)
    K_hat = float(np.max(dist * np.exp(-slope * times)) / eps)
    return ContractionResult(slope, K_hat, r2, times, dist)


@dataclass
class LimitCycleResult:
    fitted_rate: float
    fit_r2: float
    phase_shift: float
    times: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)


def _orbit_point(orbit, period_traj, t):
    k = math.floor(t / orbit.period)
    return period_traj.dense(t - k * orbit.period) + k


def limit_cycle_convergence(model, orbit, X0, T, cfg=ode.DEFAULT, align=True, tail=0.5,
                            samples_per_unit=16):
    """Distance of ``Phi^t(X0)`` to the locked orbit and its tail decay rate.

    The comparison point is ``Phi^{t + phi}(X_*) + k 1``.  With ``align``
    set, ``phi`` in ``[0, 1/rho)`` and the integer lift ``k`` minimize the
    distance at the end of the horizon (the asymptotic phase of ``X0``
    modulo the diagonal shift).  Raises :class:`OrbitMisaligned` if the
    aligned distance at ``t = 0`` exceeds 0.1.  Without ``align``,
    ``phi = k = 0``.
    """
    X0 = np.asarray(X0, dtype=float)
    P = orbit.period
    per = flow(model, orbit.X_star, 0.0, P, cfg)
    times = np.arange(0, int(samples_per_unit * T) + 1) / samples_per_unit
    traj = flow(model, X0, 0.0, T, cfg, times[1:-1])
    xs = np.array([traj.at(t) for t in times])
    phi, lift = 0.0, 0.0
    if align:
        end = xs[-1]

        def gap(p):
            d = end - _orbit_point(orbit, per, T + p)
            return np.linalg.norm(d - np.round(d.mean()))

        # coarse scan of a full period, then a bounded refinement around the best phase
        grid = P * np.arange(32) / 32
        p0 = grid[int(np.argmin([gap(p) for p in grid]))]
        res = minimize_scalar(gap, bounds=(p0 - P / 32, p0 + P / 32), method="bounded",
                              options={"xatol": 1e-13})
        phi = float(res.x)
        lift = float(np.round((end - _orbit_point(orbit, per, T + phi)).mean()))
    # re-integrate one period with marks at the comparison phases so the
    # reference is read at solver accuracy, not through the interpolant
    ks = np.floor((times + phi) / P)
    taus = (times + phi) - ks * P
    marks = np.unique(taus[(taus > 0) & (taus < P)])
    per = flow(model, orbit.X_star, 0.0, P, cfg, marks)
    ref = np.array([per.at(tau) for tau in taus]) + (ks + lift)[:, None]
    dist = np.linalg.norm(xs - ref, axis=1)
    if align and dist[0] > 0.1:
        raise OrbitMisaligned(f"aligned distance at t=0 is {dist[0]:.3g}")
    if np.all(dist > 0):
        slope, _, r2 = _tail_fit(times, dist, tail, P)
    else:
        slope, r2 = float("-inf"), float("nan")
    return LimitCycleResult(slope, r2, phi, times, dist)


def write_contraction_csv(result, path):
    ode.write_columns_csv(path, ["t", "log_distance"], [result.times, np.log(result.distances)])


def write_chart_csv(xis, ys, path):
    xis = np.atleast_2d(xis)
    ys = np.atleast_2d(ys)
    N = xis.shape[1]
    header = [f"xi_{i + 1}" for i in range(N)] + [f"y_{i + 1}" for i in range(N)]
    ode.write_columns_csv(path, header, list(xis.T) + list(ys.T))
