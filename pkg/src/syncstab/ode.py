"""Explicit Runge-Kutta integration with Hermite dense output.

Two schemes are provided: classical RK4 with a fixed step (bit reproducible,
used by the property tests) and the Dormand-Prince 5(4) pair with step size
control (the default).  States may be arrays of any shape; the field is
called as ``field(t, y)`` with ``y`` in that shape.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import MaxStepsExceeded, NoCrossing, StepUnderflow


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45-adaptive"
    step: float = 0.01
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_steps: int = 1_000_000
    max_step: float = np.inf

    def __post_init__(self):
        if self.method not in ("rk4-fixed", "rk45-adaptive"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.step <= 0 or self.abs_tol <= 0 or self.rel_tol <= 0 or self.max_step <= 0:
            raise ValueError("step sizes and tolerances must be positive")

    def to_dict(self):
        return {"method": self.method, "step": self.step, "abs_tol": self.abs_tol,
                "rel_tol": self.rel_tol, "max_steps": self.max_steps,
                "max_step": None if np.isinf(self.max_step) else self.max_step}


DEFAULT = IntegratorConfig()


class Trajectory:
    """Sampled solution with a piecewise cubic Hermite interpolant.

    ``states[k]`` and ``derivs[k]`` are the state and the field value at
    ``times[k]``.
    """

    def __init__(self, times, states, derivs):
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        self.derivs = np.asarray(derivs, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def shape(self):
        return self.states.shape[1:]

    @property
    def t0(self):
        return self.times[0]

    @property
    def t1(self):
        return self.times[-1]

    @property
    def final(self):
        return self.states[-1]

    def __len__(self):
        return len(self.times)

    def __call__(self, t):
        return self.dense(t)

    def dense(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if len(self.times) == 1:
            out = np.repeat(self.states[:1], len(t), axis=0)
            return out[0] if scalar else out
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        ta, tb = self.times[k], self.times[k + 1]
        h = tb - ta
        th = (t - ta) / h
        extra = (1,) * len(self.shape)
        th = th.reshape(th.shape + extra)
        h = h.reshape(h.shape + extra)
        th2 = th * th
        th3 = th2 * th
        h00 = 2 * th3 - 3 * th2 + 1
        h10 = th3 - 2 * th2 + th
        h01 = -2 * th3 + 3 * th2
        h11 = th3 - th2
        out = (h00 * self.states[k] + h10 * h * self.derivs[k]
               + h01 * self.states[k + 1] + h11 * h * self.derivs[k + 1])
        return out[0] if scalar else out

    def derivative(self, t):
        """Derivative of the Hermite interpolant."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        ta, tb = self.times[k], self.times[k + 1]
        h = tb - ta
        th = (t - ta) / h
        extra = (1,) * len(self.shape)
        th = th.reshape(th.shape + extra)
        h = h.reshape(h.shape + extra)
        d00 = (6 * th * th - 6 * th) / h
        d10 = 3 * th * th - 4 * th + 1
        d01 = -d00
        d11 = 3 * th * th - 2 * th
        return (d00 * self.states[k] + d10 * self.derivs[k]
                + d01 * self.states[k + 1] + d11 * self.derivs[k + 1])

    def at(self, t):
        """State at a stored time when present, otherwise the dense value."""
        k = np.searchsorted(self.times, t)
        if k < len(self.times) and self.times[k] == t:
            return self.states[k]
        return self.dense(t)


class MatrixTrajectory:
    def __init__(self, times, matrices):
        self.times = np.asarray(times, dtype=float)
        self.matrices = np.asarray(matrices, dtype=float)

    @property
    def final(self):
        return self.matrices[-1]

    def __len__(self):
        return len(self.times)


# Dormand-Prince 5(4) tableau
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
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                    -92097 / 339200, 187 / 2100, 1 / 40])


_A_ROWS = [np.array(row) for row in _A]


def _dopri_step(f, t, y, k1, h):
    shape = y.shape
    yf = y.ravel()
    K = np.empty((7, yf.size))
    K[0] = k1.ravel()
    for i in range(1, 7):
        yi = yf + h * (_A_ROWS[i] @ K[:i])
        K[i] = np.asarray(f(t + _C[i] * h, yi.reshape(shape))).ravel()
    y_new = yf + h * (_B @ K)
    err = h * (_E @ K)
    return y_new.reshape(shape), K[6].reshape(shape), err.reshape(shape)


def _rk4_step(f, t, y, k1, h):
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _initial_step(f, t0, y0, f0, cfg, span):
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y0)
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span, cfg.max_step)


def integrate(field, y0, t0, t1, cfg=DEFAULT, t_eval=None):
    """Integrate ``y' = field(t, y)`` from ``t0`` to ``t1``.

    ``t_eval`` times are hit exactly by the stepper, so the stored states
    there are genuine Runge-Kutta values rather than interpolants.
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    y = np.array(y0, dtype=float)
    t = float(t0)
    marks = [float(t1)]
    if t_eval is not None:
        marks = sorted(set(float(s) for s in np.atleast_1d(t_eval) if t0 < s < t1) | {float(t1)})
    f = field
    k1 = np.asarray(f(t, y), dtype=float)
    times, states, derivs = [t], [y], [k1]
    mi = 0
    nsteps = 0
    if cfg.method == "rk4-fixed":
        while mi < len(marks):
            target = marks[mi]
            h = min(cfg.step, target - t)
            if target - (t + h) < 1e-12 * max(1.0, abs(target)):
                h = target - t
            y = _rk4_step(f, t, y, k1, h)
            t = target if h == target - t else t + h
            if t == target:
                mi += 1
            k1 = np.asarray(f(t, y), dtype=float)
            times.append(t), states.append(y), derivs.append(k1)
            nsteps += 1
            if nsteps > cfg.max_steps:
                raise MaxStepsExceeded(f"exceeded {cfg.max_steps} steps at t={t}")
        return Trajectory(times, states, derivs)

    h = _initial_step(f, t, y, k1, cfg, t1 - t0)
    while mi < len(marks):
        target = marks[mi]
        h = min(h, cfg.max_step)
        hit = t + h >= target - 1e-12 * max(1.0, abs(target))
        h_try = target - t if hit else h
        y_new, k_new, err = _dopri_step(f, t, y, k1, h_try)
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        en = float(np.max(np.abs(err) / scale)) if err.size else 0.0
        nsteps += 1
        if nsteps > cfg.max_steps:
            raise MaxStepsExceeded(f"exceeded {cfg.max_steps} steps at t={t}")
        if en <= 1.0:
            t = target if hit else t + h_try
            if hit:
                mi += 1
            y, k1 = y_new, k_new
            times.append(t), states.append(y), derivs.append(k1)
            fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            # a step shortened to land on a mark keeps the unclipped proposal
            h = max(h, h_try * fac) if (hit and h_try < h) else h_try * fac
        else:
            if not np.isfinite(en):
                fac = 0.2
            else:
                fac = max(0.2, 0.9 * en ** -0.2)
            h = h_try * fac
            if h < 1e-14:
                raise StepUnderflow(f"step size underflow at t={t}")
    return Trajectory(times, states, derivs)


def integrate_variational(field, jacobian, y0, t0, t1, cfg=DEFAULT, t_eval=None):
    """Integrate the flow and the fundamental matrix ``S' = J(t, y) S``, ``S(t0) = I``."""
    y0 = np.asarray(y0, dtype=float)
    n = y0.size

    def rhs(t, w):
        y = w[:n]
        S = w[n:].reshape(n, n)
        return np.concatenate([field(t, y), (jacobian(t, y) @ S).ravel()])

    w0 = np.concatenate([y0, np.eye(n).ravel()])
    traj = integrate(rhs, w0, t0, t1, cfg, t_eval)
    flow = Trajectory(traj.times, traj.states[:, :n], traj.derivs[:, :n])
    mats = MatrixTrajectory(traj.times, traj.states[:, n:].reshape(-1, n, n))
    return flow, mats


def fundamental_matrix(A, t0, t1, N, cfg=DEFAULT, t_eval=None):
    """Fundamental matrix of ``y' = A(t) y`` with identity at ``t0``."""
    def rhs(t, S):
        return A(t) @ S

    traj = integrate(rhs, np.eye(N), t0, t1, cfg, t_eval)
    return MatrixTrajectory(traj.times, traj.states)


def event_crossing(traj, g, direction=0):
    """First time where ``g(t, y(t))`` crosses zero with the requested sign change.

    ``direction`` +1 selects upward crossings, -1 downward, 0 either.
    """
    vals = np.array([g(t, y) for t, y in zip(traj.times, traj.states)])

    def gd(t):
        return float(g(t, traj.dense(t)))

    for k in range(len(vals) - 1):
        a, b = vals[k], vals[k + 1]
        if a == 0.0 and (direction == 0 or (direction > 0) == (b > 0)):
            return float(traj.times[k])
        up = a < 0 <= b
        down = a > 0 >= b
        if (direction > 0 and up) or (direction < 0 and down) or (direction == 0 and (up or down)):
            if b == 0.0:
                return float(traj.times[k + 1])
            ta, tb = traj.times[k], traj.times[k + 1]
            ga, gb = gd(ta), gd(tb)
            if ga * gb > 0:
                continue
            return float(optimize.brentq(gd, ta, tb, xtol=1e-15,
                                         rtol=4 * np.finfo(float).eps, maxiter=200))
    raise NoCrossing("g does not change sign on the trajectory")


def quadrature(f, a, b, n=256):
    """Composite Simpson rule with ``n`` (even) subintervals; ``f`` must accept arrays."""
    if n < 2 or n % 2:
        raise ValueError("n must be even and at least 2")
    x = np.linspace(a, b, n + 1)
    y = np.asarray(f(x), dtype=float)
    h = (b - a) / n
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float(h / 3.0 * np.tensordot(w, y, axes=(0, 0)))


def richardson_quadrature(f, a, b, n=256):
    """Simpson estimate at ``n`` and ``2n`` plus the Richardson-corrected value."""
    s1 = quadrature(f, a, b, n)
    s2 = quadrature(f, a, b, 2 * n)
    return s2 + (s2 - s1) / 15.0, abs(s2 - s1)


def _fmt(v):
    return format(float(v), ".17g")


def write_trajectory_csv(traj, path, names=None):
    """CSV with header ``t,x1,...,xN`` and 17 significant digits."""
    states = traj.states.reshape(len(traj.times), -1)
    n = states.shape[1]
    names = names or [f"x{i + 1}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *names])
        for t, row in zip(traj.times, states):
            w.writerow([_fmt(t), *map(_fmt, row)])


def write_matrix_csv(mtraj, path):
    """Row-major matrix blocks, one line per time with a leading ``t`` column."""
    n, m = mtraj.matrices.shape[1:]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *[f"m{i + 1}{j + 1}" for i in range(n) for j in range(m)]])
        for t, M in zip(mtraj.times, mtraj.matrices):
            w.writerow([_fmt(t), *map(_fmt, M.ravel())])


def write_columns_csv(path, header, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])
