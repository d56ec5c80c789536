"""Nonlinear flow experiments on the mean-field system.

``x_i' = F(X, x_i) + H_i(X, x_i)``: synchronization monitoring, the mean
phase ``mu' = F(X(t), mu)``, rotation numbers and phase-locked orbits
``Phi^{1/rho}(X_*) = X_* + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import ode
from .errors import NewtonDiverged, NotConverged, SingularShootingJacobian

SHOOT_CFG = ode.IntegratorConfig(abs_tol=1e-12, rel_tol=1e-12)


def _rhs(model):
    return lambda t, X: model.field(X)


def flow(model, X0, t0, t1, cfg=ode.DEFAULT, t_eval=None):
    """Trajectory of ``Phi^t(X0)`` on ``[t0, t1]``."""
    return ode.integrate(_rhs(model), np.asarray(X0, dtype=float), t0, t1, cfg, t_eval)


# --- monitoring ----------------------------------------------------------

@dataclass
class SyncRunReport:
    dispersion_max: float
    velocity_min: float
    horizon: float
    D_bound: float

    @property
    def within_bounds(self):
        return self.dispersion_max < self.D_bound and self.velocity_min > 0

    def to_dict(self):
        d = dict(self.__dict__)
        d["within_bounds"] = self.within_bounds
        return d


def _refine_extremum(traj, fun, k):
    """Maximize ``fun`` of the dense output on the two steps around knot ``k``."""
    lo = traj.times[max(k - 1, 0)]
    hi = traj.times[min(k + 1, len(traj) - 1)]
    if hi <= lo:
        return fun(lo)
    res = minimize_scalar(lambda t: -fun(t), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return max(-res.fun, fun(traj.times[k]))


def dispersion_monitor(traj, D_bound=0.1):
    """Largest phase spread and smallest velocity along a stored trajectory.

    Both extremes are taken over the knots first and then refined on the
    dense output around the extremal knot.
    """
    x = traj.states
    spread = x.max(axis=1) - x.min(axis=1)
    k = int(np.argmax(spread))
    disp = _refine_extremum(traj, lambda t: float(np.ptp(traj.dense(t))), k)
    vel = traj.derivs.min(axis=1)
    k = int(np.argmin(vel))
    vmin = -_refine_extremum(traj, lambda t: -float(np.min(traj.derivative(t))), k)
    return SyncRunReport(float(disp), float(vmin), float(traj.t1 - traj.t0), float(D_bound))


@dataclass
class MeanPhase:
    mu0: float
    trajectory: ode.Trajectory

    def __call__(self, t):
        return self.trajectory.dense(t)[..., -1]


def flow_with_mean_phase(model, X0, mu0, t0, t1, cfg=ode.DEFAULT, t_eval=None):
    """Integrate ``(X, mu)`` jointly; the last state component is ``mu``."""
    def rhs(t, w):
        X = w[:-1]
        return np.concatenate([model.field(X), [model.F(X, w[-1])]])

    w0 = np.concatenate([np.asarray(X0, dtype=float), [float(mu0)]])
    return ode.integrate(rhs, w0, t0, t1, cfg, t_eval)


def mean_phase(model, traj, mu0, cfg=ode.DEFAULT):
    """Mean phase ``mu' = F(X(t), mu)`` driven by the orbit of ``traj``.

    The orbit is re-integrated together with ``mu`` from ``traj``'s initial
    state, so ``mu`` sees the orbit at solver accuracy rather than through
    the interpolant.
    """
    joint = flow_with_mean_phase(model, traj.states[0], mu0, traj.t0, traj.t1, cfg,
                                 traj.times[1:-1])
    return MeanPhase(float(mu0), joint)


# --- rotation numbers ----------------------------------------------------

def _level_time(traj, i, level):
    x = traj.states[:, i]
    k = int(np.searchsorted(x, level))
    if k == 0 or k >= len(x):
        raise NotConverged(f"oscillator {i} does not reach level {level}")
    return brentq(lambda t: traj.dense(t)[i] - level, traj.times[k - 1], traj.times[k],
                  xtol=1e-14, rtol=4 * np.finfo(float).eps)


def _rotation_from(traj, t_start):
    """Per-oscillator ``M / (t_M - t_0)`` between integer-level crossings after ``t_start``."""
    X_start = traj.at(t_start) if t_start > traj.t0 else traj.states[0]
    X_end = traj.final
    out = np.empty(len(X_end))
    for i in range(len(X_end)):
        first = math.floor(X_start[i]) + 1
        last = math.floor(X_end[i])
        if last <= first:
            raise NotConverged("horizon too short for two integer crossings")
        out[i] = (last - first) / (_level_time(traj, i, last) - _level_time(traj, i, first))
    return out


def rotation_numbers(model, X0, T, cfg=ode.DEFAULT, tol=1e-6):
    """Per-oscillator rotation numbers and the half-horizon estimate.

    Raw quotients ``(x(T) - x(0)) / T`` carry an ``O(1/T)`` bias from the
    periodic part of the phase; timing whole turns after a burn-in of
    ``T/2`` removes it once the orbit is locked.  The half-horizon
    estimate uses ``[T/4, T/2]``.
    """
    X0 = np.asarray(X0, dtype=float)
    traj = flow(model, X0, 0.0, T, cfg, t_eval=[T / 4, T / 2])
    full = _rotation_from(traj, T / 2)
    half_traj = ode.Trajectory(traj.times[traj.times <= T / 2 + 1e-12],
                               traj.states[traj.times <= T / 2 + 1e-12],
                               traj.derivs[traj.times <= T / 2 + 1e-12])
    half = _rotation_from(half_traj, T / 4)
    if np.max(np.abs(full - half)) > tol:
        raise NotConverged(f"rotation number estimates differ by {np.max(np.abs(full - half)):.3e}",
                           sequence=np.stack([half, full]))
    return full, half


def rotation_number(model, X0, T, cfg=ode.DEFAULT, tol=1e-6):
    """Rotation number of the first oscillator."""
    return float(rotation_numbers(model, X0, T, cfg, tol)[0][0])


# --- locked orbits -------------------------------------------------------

@dataclass
class LockedOrbit:
    X_star: np.ndarray
    rho: float
    period: float
    residual: float
    newton_steps: int
    profile_times: np.ndarray = field(repr=False, default=None)
    psi_profile: np.ndarray = field(repr=False, default=None)
    psi_periodicity_residual: float = float("nan")
    model: object = field(repr=False, default=None)

    def to_dict(self):
        return {"X_star": self.X_star.tolist(), "rho": self.rho, "period": self.period,
                "residual": self.residual, "newton_steps": self.newton_steps,
                "psi_periodicity_residual": self.psi_periodicity_residual}


def _shoot(model, X, T, cfg):
    flow_tr, S = ode.integrate_variational(lambda t, y: model.field(y),
                                           lambda t, y: model.jacobian(y), X, 0.0, T, cfg)
    XT = flow_tr.final
    return XT - X - 1.0, S.final, model.field(XT)


def _period_guess(model, X, cfg):
    """Time for ``mean(X)`` to advance by one."""
    m0 = float(np.mean(X))
    span = 2.0 / max(float(np.min(model.field(X))), 1e-3)
    traj = flow(model, X, 0.0, span, cfg)
    T = ode.event_crossing(traj, lambda t, y: np.mean(y) - m0 - 1.0, direction=1)
    # one Newton polish removes the interpolation error of the crossing
    XT = flow(model, X, 0.0, T, cfg).final
    return T - (np.mean(XT) - m0 - 1.0) / np.mean(model.field(XT))


def find_locked_orbit(model, X_guess, cfg=SHOOT_CFG, burn_in=50.0, max_iter=20, tol=1e-9,
                      profile_points=64):
    """Solve ``Phi^T(X) = X + 1`` on the section ``mean(X) = const`` by damped Newton.

    Unknowns are ``(X, T)``.  Steps come from a least-squares solve, which
    also handles the fully degenerate uncoupled case in a single step.
    The step is halved up to 8 times until the residual decreases.
    """
    if not model.perturbation.one_periodic:
        raise ValueError("locked orbits need a perturbation periodic along the diagonal")
    N = model.N
    X = np.asarray(X_guess, dtype=float)
    if burn_in > 0:
        X = flow(model, X, 0.0, burn_in, cfg).final
        X = X - math.floor(np.mean(X))
    m0 = float(np.mean(X))
    T = _period_guess(model, X, cfg)
    G, S, fT = _shoot(model, X, T, cfg)
    res = float(np.linalg.norm(G))
    steps = 0
    while res >= tol:
        if steps >= max_iter:
            raise NewtonDiverged(f"no convergence in {max_iter} steps", best=(X, T), residual=res)
        Jac = np.zeros((N + 1, N + 1))
        Jac[:N, :N] = S - np.eye(N)
        Jac[:N, N] = fT
        Jac[N, :N] = 1.0 / N
        rhs = -np.concatenate([G, [np.mean(X) - m0]])
        delta, _, rank, _ = np.linalg.lstsq(Jac, rhs, rcond=1e-13)
        lam = 1.0
        for _ in range(9):
            Xn, Tn = X + lam * delta[:N], T + lam * delta[N]
            if Tn > 0:
                Gn, Sn, fTn = _shoot(model, Xn, Tn, cfg)
                rn = float(np.linalg.norm(Gn))
                if rn < res:
                    break
            lam *= 0.5
        else:
            if rank < N + 1:
                raise SingularShootingJacobian(f"shooting Jacobian has rank {rank}")
            raise NewtonDiverged("damping failed to reduce the residual", best=(X, T), residual=res)
        X, T, G, S, fT, res = Xn, Tn, Gn, Sn, fTn, rn
        steps += 1
    orbit = LockedOrbit(X, 1.0 / T, T, res, steps, model=model)
    ts = np.linspace(0.0, T, profile_points + 1)
    traj = flow(model, X, 0.0, 2 * T, cfg, t_eval=np.concatenate([ts[1:], ts[1:] + T]))
    orbit.profile_times = ts
    orbit.psi_profile = np.array([traj.at(t) for t in ts]) - orbit.rho * ts[:, None]
    orbit.psi_periodicity_residual = psi_profile_check(orbit, traj)
    return orbit


def psi_profile_check(orbit, traj=None, cfg=SHOOT_CFG):
    """``max |Psi_i(t + 1/rho) - Psi_i(t)|`` over one period of samples."""
    ts = orbit.profile_times
    T = orbit.period
    if traj is None:
        traj = flow(orbit.model, orbit.X_star, 0.0, 2 * T, cfg,
                    t_eval=np.concatenate([ts[1:], ts[1:] + T]))
    a = np.array([traj.at(t) for t in ts])
    b = np.array([traj.at(t + T) for t in ts])
    return float(np.max(np.abs(b - a - 1.0)))


def write_psi_profile_csv(orbit, path):
    N = orbit.psi_profile.shape[1]
    header = ["t"] + [f"psi_{i + 1}" for i in range(N)]
    ode.write_columns_csv(path, header, [orbit.profile_times] + list(orbit.psi_profile.T))
