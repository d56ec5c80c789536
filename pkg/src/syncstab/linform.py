"""Perturbed periodic linear systems ``Y' = [b(t) I + A(t) + zeta(t)] Y``.

``A`` has identical rows ``(a_1, ..., a_N)``.  Under the stability
assumption (``b`` and ``a_j`` 1-periodic, ``b + sum a_j`` of zero mean and
``b`` of negative mean ``-alpha``) the space splits into a neutral direction
and an exponentially stable hyperplane.  The linear form ``psi`` returns
the neutral coordinate of a vector along ``1``; ``L = psi / psi(V)`` is the
same coordinate measured against a normalizing solution ``V``.

``psi`` is evaluated from the auxiliary system on ``(Z*, z_{N+1})``::

    Z*'      = b Z* + zeta [z 1 + Z* + e(t, t') Y]
    z_{N+1}' = (b + <A, 1>) z + <A, Z* + e(t, t') Y>

Integrating it once from ``Z(t') = W = (1, 0)`` without forcing and once
from zero with forcing ``Y`` gives ``psi_{t'}(Y)`` as the limit of the ratio
of the two last components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import ode
from .errors import (BetaOutOfRange, CertificationFailed, HNearZero, HstabViolated,
                     NotConverged, NotFound, PsiVanishing, SyncStabError)
from .model import TWO_PI, TrigSeries

HSTAB_TOL = 1e-6
ALPHA_MIN = 1e-6
PSI_TOL = 1e-7


class CallablePeriodic:
    """A 1-periodic scalar function given only by point evaluation.

    Integrals use the period mean plus a Simpson rule on the fractional remainder.
    """

    def __init__(self, func, n=512):
        self.func = func
        self.n = n
        self._mean = ode.quadrature(func, 0.0, 1.0, 2 * n)

    def __call__(self, t):
        return self.func(t)

    def mean(self):
        return self._mean

    def _prim(self, t):
        k = math.floor(t)
        frac = t - k
        part = ode.quadrature(self.func, float(k), float(t), self.n) if frac > 0 else 0.0
        return k * self._mean + part

    def integral(self, s, t):
        return self._prim(float(t)) - self._prim(float(s))

    def sup_abs(self, n=4096):
        return float(np.max(np.abs(self.func(np.arange(n) / n))))


class ZetaSpec:
    """Perturbation matrix ``zeta(t) = C0 + Re(Z exp(2 pi i t))``.

    Kinds: ``zero``, ``constant``, ``trig-periodic``, ``random-trig`` and
    ``normalizing-trig`` (random with zero row sums, so that ``1`` times
    ``P(t, t')`` solves the system and ``zeta`` is normalizing).
    """

    def __init__(self, kind, C0, Z, D=None, seed=None):
        self.kind = kind
        self.C0 = np.asarray(C0, dtype=float)
        self.Z = np.asarray(Z, dtype=complex)
        self.D = D
        self.seed = seed
        self.N = self.C0.shape[0]
        self._periodic = bool(np.any(self.Z != 0))
        self._re, self._im = self.Z.real.copy(), self.Z.imag.copy()

    @classmethod
    def zero(cls, N):
        return cls("zero", np.zeros((N, N)), np.zeros((N, N)), D=0.0)

    @classmethod
    def constant(cls, M):
        M = np.asarray(M, dtype=float)
        return cls("constant", M, np.zeros_like(M))

    @classmethod
    def trig(cls, cos, sin, const=None):
        cos = np.asarray(cos, dtype=float)
        sin = np.asarray(sin, dtype=float)
        C0 = np.zeros_like(cos) if const is None else np.asarray(const, dtype=float)
        return cls("trig-periodic", C0, cos - 1j * sin)

    @classmethod
    def random_trig(cls, N, D, seed, normalizing=False):
        rng = np.random.default_rng(seed)
        amp = rng.uniform(-1.0, 1.0, size=(N, N))
        phase = rng.uniform(0.0, 1.0, size=(N, N))
        Z = amp * np.exp(2j * np.pi * phase)
        if normalizing:
            Z = Z - Z.mean(axis=1, keepdims=True)
        peak = np.abs(Z).max()
        Z = Z / peak * D if peak > 0 else Z
        kind = "normalizing-trig" if normalizing else "random-trig"
        return cls(kind, np.zeros((N, N)), Z, D=float(D), seed=seed)

    @classmethod
    def from_config(cls, cfg, N):
        kind = cfg.get("kind", "zero")
        if kind == "zero":
            return cls.zero(N)
        if kind == "constant":
            return cls.constant(cfg["matrix"])
        if kind == "trig-periodic":
            return cls.trig(cfg["cos"], cfg["sin"], cfg.get("const"))
        if kind in ("random-trig", "normalizing-trig"):
            return cls.random_trig(N, float(cfg["D"]), int(cfg.get("seed", 0)),
                                   normalizing=kind == "normalizing-trig")
        raise ValueError(f"unknown zeta kind {kind!r}")

    def __call__(self, t):
        if not self._periodic:
            return self.C0
        if np.ndim(t) == 0:
            ph = TWO_PI * float(t)
            return self.C0 + math.cos(ph) * self._re - math.sin(ph) * self._im
        return self.C0 + (self.Z * np.exp(2j * np.pi * t)).real

    def norm(self, n=1024):
        """Sampled sup over one period of the largest entry."""
        if not self._periodic:
            return float(np.abs(self.C0).max()) if self.C0.size else 0.0
        ts = np.arange(n) / n
        vals = self.C0[None] + (self.Z[None] * np.exp(2j * np.pi * ts)[:, None, None]).real
        return float(np.abs(vals).max())

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind in ("random-trig", "normalizing-trig"):
            d.update(D=self.D, seed=self.seed)
        elif self.kind == "constant":
            d["matrix"] = self.C0.tolist()
        elif self.kind == "trig-periodic":
            d.update(cos=self.Z.real.tolist(), sin=(-self.Z.imag).tolist(),
                     const=self.C0.tolist())
        return d


class _StackedTrig:
    """``b``, all ``a_j`` and optionally the entries of ``zeta`` from one table of harmonics."""

    def __init__(self, series, zeta=None):
        ks = {int(k) for f in series for k in f.ks}
        if zeta is not None:
            ks.add(1)
        ks = sorted(ks)
        col = {k: i for i, k in enumerate(ks)}
        n = len(ks)
        rows = len(series) + (0 if zeta is None else zeta.C0.size)
        self.N = len(series) - 1
        self.w = TWO_PI * np.array(ks, dtype=float)
        self.const = np.zeros(rows)
        self.table = np.zeros((rows, 2 * n))
        for r, f in enumerate(series):
            self.const[r] = f.const
            for k, a, b in zip(f.ks, f.a, f.b):
                self.table[r, col[int(k)]] = a
                self.table[r, n + col[int(k)]] = b
        if zeta is not None:
            r0 = len(series)
            self.const[r0:] = zeta.C0.ravel()
            self.table[r0:, col[1]] = zeta.Z.real.ravel()
            self.table[r0:, n + col[1]] = -zeta.Z.imag.ravel()
        self._ph = np.empty(2 * n)

    def values(self, t):
        n = len(self.w)
        if n:
            ph = self.w * float(t)
            self._ph[:n] = np.cos(ph)
            self._ph[n:] = np.sin(ph)
            return self.const + self.table @ self._ph
        return self.const

    def __call__(self, t):
        v = self.values(t)
        return v[0], v[1:self.N + 1]

    def frame(self, t):
        """``(b, A, zeta)`` with ``zeta`` as an (N, N) matrix."""
        v = self.values(t)
        N = self.N
        return v[0], v[1:N + 1], v[N + 1:].reshape(N, N)


@dataclass(frozen=True)
class PerturbedLinearSystem:
    N: int
    b: object
    a: tuple
    zeta: object
    t_prime: float = 0.0
    coefficients: object = field(default=None, repr=False, compare=False)
    _frame: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if len(self.a) != self.N:
            raise ValueError("need one coefficient function a_j per oscillator")
        object.__setattr__(self, "a", tuple(self.a))
        series = (self.b,) + self.a
        if all(isinstance(f, TrigSeries) for f in series):
            if self.coefficients is None:
                object.__setattr__(self, "coefficients", _StackedTrig(series))
            if isinstance(self.zeta, ZetaSpec):
                object.__setattr__(self, "_frame", _StackedTrig(series, self.zeta).frame)

    @property
    def periodic(self):
        """True when ``b``, ``a_j`` and ``zeta`` are all known to be 1-periodic."""
        return self._frame is not None

    def frame(self, t):
        """``(b(t), (a_j(t)), zeta(t))``."""
        if self._frame is not None:
            return self._frame(t)
        b, A = self.b_and_A(t)
        return b, A, np.asarray(self.zeta(t), dtype=float)

    def b_and_A(self, t):
        """``(b(t), (a_1(t), ..., a_N(t)))``; ``coefficients`` may supply both in one call."""
        if self.coefficients is not None:
            b, A = self.coefficients(t)
            return float(b), np.asarray(A, dtype=float)
        return float(self.b(t)), np.array([float(aj(t)) for aj in self.a])

    def b_val(self, t):
        return float(self.b(t))

    def A_star(self, t):
        return self.b_and_A(t)[1]

    def matrix(self, t):
        b, A = self.b_and_A(t)
        M = np.repeat(A[None, :], self.N, axis=0)
        M[np.diag_indices(self.N)] += b
        return M + self.zeta(t)

    def a_sum(self):
        if all(isinstance(aj, TrigSeries) for aj in self.a):
            total = self.a[0]
            for aj in self.a[1:]:
                total = total + aj
            return total
        return CallablePeriodic(lambda t: sum(np.asarray(aj(t)) for aj in self.a))

    def with_zeta(self, zeta):
        return replace(self, zeta=zeta)

    def to_dict(self):
        d = {"N": self.N, "t_prime": self.t_prime}
        if isinstance(self.b, TrigSeries):
            d["b"] = self.b.to_spec()
        if all(isinstance(aj, TrigSeries) for aj in self.a):
            d["a"] = [aj.to_spec() for aj in self.a]
        if isinstance(self.zeta, ZetaSpec):
            d["zeta"] = self.zeta.to_dict()
        return d


def system_from_config(cfg):
    N = int(cfg["N"])
    b = TrigSeries.from_spec(cfg["b"])
    a_cfg = cfg["a"]
    if isinstance(a_cfg, dict):
        a = [TrigSeries.from_spec(a_cfg)] * N
    else:
        if len(a_cfg) != N:
            raise ValueError("'a' must list N coefficient series")
        a = [TrigSeries.from_spec(x) for x in a_cfg]
    zeta = ZetaSpec.from_config(cfg.get("zeta", {"kind": "zero"}), N)
    return PerturbedLinearSystem(N, b, tuple(a), zeta, float(cfg.get("t_prime", 0.0)))


def constant_system(N, zeta=None):
    """``b = -1``, ``a_j = 1/N``: the eigen-decomposable reference case."""
    b = TrigSeries(-1.0)
    a = tuple(TrigSeries(1.0 / N) for _ in range(N))
    return PerturbedLinearSystem(N, b, a, zeta if zeta is not None else ZetaSpec.zero(N))


def balanced_system(N, zeta=None):
    """``b = -1 + 2 pi cos(2 pi t)`` and ``sum a = 1 - 2 pi cos(2 pi t)``: ``b + sum a = 0`` pointwise."""
    b = TrigSeries(-1.0, {1: 2 * np.pi})
    a = tuple(TrigSeries(1.0 / N, {1: -2 * np.pi / N}) for _ in range(N))
    return PerturbedLinearSystem(N, b, a, zeta if zeta is not None else ZetaSpec.zero(N))


def random_periodic_system(N, seed, D=0.0, zeta_kind="random-trig", amplitude=0.3):
    """A random system satisfying the stability assumption by construction.

    ``b`` gets a random negative mean and a few harmonics; the ``a_j``
    carry random harmonics and constants summing to ``-mean(b)``.
    """
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.5, 1.5)
    b = TrigSeries(-alpha, {k: amplitude * rng.uniform(-1, 1) for k in (1, 2)},
                   {k: amplitude * rng.uniform(-1, 1) for k in (1, 2)})
    w = rng.dirichlet(np.ones(N))
    a = tuple(TrigSeries(alpha * w[j], {1: amplitude * rng.uniform(-1, 1) / N},
                         {1: amplitude * rng.uniform(-1, 1) / N}) for j in range(N))
    if D > 0:
        zeta = ZetaSpec.random_trig(N, D, seed + 10_000,
                                    normalizing=zeta_kind == "normalizing-trig")
    else:
        zeta = ZetaSpec.zero(N)
    return PerturbedLinearSystem(N, b, a, zeta)


# --- scalar factors ------------------------------------------------------

def e_factor(sys, t, s):
    """``exp(int_s^t b)``."""
    return math.exp(sys.b.integral(s, t))


def p_factor(sys, t, s):
    """``exp(int_s^t b + sum_j a_j)``."""
    return math.exp(sys.b.integral(s, t) + sys.a_sum().integral(s, t))


@dataclass
class StabilityConstants:
    alpha: float
    beta: float
    c_b: float
    c_a: float
    D: float
    zero_sum_residual: float
    D_star_search: float = None

    def to_dict(self):
        return dict(self.__dict__)


def check_Hstab(sys, beta_fraction=0.5):
    """Verify the stability assumption and collect the constants used downstream."""
    mean_b = sys.b.mean()
    residual = abs(mean_b + sys.a_sum().mean())
    alpha = -mean_b
    if residual > HSTAB_TOL:
        raise HstabViolated(f"int_0^1 b + sum a_j = {mean_b + sys.a_sum().mean():.3e}",
                            residual=residual, alpha=alpha)
    if alpha <= ALPHA_MIN:
        raise HstabViolated(f"alpha = {alpha:.3e} is not positive", residual=residual,
                            alpha=alpha)
    grid = np.arange(4096) / 4096
    c_b = float(np.max(np.abs(sys.b(grid))))
    c_a = float(np.max(sum(np.abs(np.asarray(aj(grid))) for aj in sys.a)))
    D = sys.zeta.norm() if hasattr(sys.zeta, "norm") else float("nan")
    return StabilityConstants(alpha=alpha, beta=beta_fraction * alpha, c_b=c_b, c_a=c_a, D=D,
                              zero_sum_residual=residual)


def fundamental_R(sys, t_prime, t, cfg=ode.DEFAULT):
    if t < t_prime:
        raise ValueError("t must not precede t_prime")
    if t == t_prime:
        return np.eye(sys.N)
    return ode.fundamental_matrix(sys.matrix, t_prime, t, sys.N, cfg).final


def flow_columns(sys, Y0, t0, t1, cfg=ode.DEFAULT, t_eval=None):
    """Integrate ``Y' = M(t) Y`` for the columns of ``Y0`` on a common step sequence."""
    def rhs(t, Y):
        return sys.matrix(t) @ Y

    return ode.integrate(rhs, np.asarray(Y0, dtype=float), t0, t1, cfg, t_eval)


# --- the auxiliary system ------------------------------------------------

@dataclass
class AuxiliaryState:
    Z_star: np.ndarray
    z_last: float
    Y: np.ndarray

    @property
    def W(self):
        return np.concatenate([np.ones(len(self.Z_star)), [0.0]])


def _aux_rhs(sys, forcing):
    N = sys.N

    def rhs(t, w):
        b, A, zeta = sys.frame(t)
        Z = w[1:].reshape(N + 1, -1)
        Zs, z = Z[:N], Z[N]
        f = Zs + w[0] * forcing
        out = np.empty_like(w)
        out[0] = b * w[0]
        dZ = out[1:].reshape(N + 1, -1)
        dZ[:N] = b * Zs + zeta @ (z + f)
        dZ[N] = (b + A.sum()) * z + A @ f
        return out

    return rhs


def _aux_integrate(sys, forcing, Z0, t_end, cfg, t_eval=None):
    forcing = np.asarray(forcing, dtype=float).reshape(sys.N, -1)
    Z0 = np.asarray(Z0, dtype=float).reshape(sys.N + 1, -1)
    w0 = np.concatenate([[1.0], Z0.ravel()])
    return ode.integrate(_aux_rhs(sys, forcing), w0, sys.t_prime, t_end, cfg, t_eval)


def solve_auxiliary(sys, Y, Z0, t_end, cfg=ode.DEFAULT, t_eval=None):
    """Integrate the auxiliary system with forcing ``Y`` from ``Z0 = (Z*, z_{N+1})``.

    Returns a trajectory whose states are ``(e, Z*_1..Z*_N, z_{N+1})``.
    """
    if not t_end > sys.t_prime:
        raise ValueError("t_end must exceed t_prime")
    return _aux_integrate(sys, Y, Z0, t_end, cfg, t_eval)


def reconstruct(sys, aux_traj, Y):
    """``z_{N+1} 1 + Z* + e(t, t') Y`` along an auxiliary trajectory."""
    N = sys.N
    st = aux_traj.states
    return st[:, N + 1:N + 2] + st[:, 1:N + 1] + st[:, :1] * np.asarray(Y)[None, :]


@dataclass
class HIntegral:
    value: float
    T_W: float
    times: np.ndarray
    values: np.ndarray


def h_integral(sys, t_prime, t, cfg=ode.DEFAULT, samples_per_period=8):
    """``H(t, t') = int <A, S*(s; t') W> P(t', s) ds``, read off as ``z_{N+1}(t) / P(t, t')``."""
    sys = replace(sys, t_prime=t_prime)
    if t == t_prime:
        return HIntegral(0.0, float("nan"), np.array([t_prime]), np.array([0.0]))
    if t < t_prime:
        raise ValueError("t must not precede t_prime")
    grid = t_prime + np.arange(1, int(samples_per_period * (t - t_prime)) + 1) / samples_per_period
    grid = grid[grid < t]
    W = np.concatenate([np.ones(sys.N), [0.0]])
    traj = _aux_integrate(sys, np.zeros(sys.N), W, t, cfg, grid)
    times = np.concatenate([grid, [t]])
    z = np.array([traj.at(s)[-1] for s in times])
    P = np.array([p_factor(sys, s, t_prime) for s in times])
    H = z / P
    if abs(H[-1]) < 1e-12:
        raise HNearZero(f"|H({t}, {t_prime})| = {abs(H[-1]):.3e}")
    thresh = max(1e-12, 1e-3 * np.max(np.abs(H)))
    below = np.nonzero(np.abs(H) < thresh)[0]
    T_W = float(times[below[-1] + 1]) if below.size else float(times[0])
    return HIntegral(float(H[-1]), T_W, times, H)


# --- psi and L -----------------------------------------------------------

# early stopping of the default psi horizon: chunk length in periods and the
# stopping threshold relative to the declared convergence tolerance
EARLY_CHUNK = 4
EARLY_FACTOR = 1e-2


def default_horizon(alpha):
    return float(math.ceil(20.0 / alpha))


def _stepper(sys, forcing, cfg, w):
    """Advance the auxiliary state from ``t' + m`` to ``t' + m_next`` by integration."""
    N, cols = sys.N, forcing.shape[1]
    rhs = _aux_rhs(sys, forcing)

    def step(w, m, m_next, z):
        seg = sys.t_prime + np.arange(m + 1, m_next + 1, dtype=float)
        traj = ode.integrate(rhs, w, sys.t_prime + m, seg[-1], cfg, seg[:-1])
        z.extend(traj.at(t)[1 + N * cols:].copy() for t in seg)
        return traj.final

    return step


def _period_map(sys, forcing, cfg):
    """Advance the auxiliary state by whole periods with its one-period propagator.

    The auxiliary system is linear with 1-periodic coefficients and each
    column obeys the same homogeneous law plus ``e`` times its own forcing,
    so one period is ``e -> E e`` and ``Z -> G Z + e H``.  ``G``, ``H`` and
    ``E`` come from a single integration over ``[t', t' + 1]``.
    """
    N, cols = sys.N, forcing.shape[1]
    big = np.concatenate([np.zeros((N, N + 1)), forcing], axis=1)
    w0 = np.concatenate([[1.0], np.concatenate([np.eye(N + 1), np.zeros((N + 1, cols))],
                                               axis=1).ravel()])
    end = ode.integrate(_aux_rhs(sys, big), w0, sys.t_prime, sys.t_prime + 1.0, cfg).final
    E = end[0]
    Z = end[1:].reshape(N + 1, -1)
    G, H = Z[:, :N + 1], Z[:, N + 1:]

    def step(w, m, m_next, z):
        e, Zc = w[0], w[1:].reshape(N + 1, cols)
        for _ in range(m, m_next):
            Zc = G @ Zc + e * H
            e = E * e
            z.append(Zc[N].copy())
        return np.concatenate([[e], Zc.ravel()])

    return step


def _quotients(sys, vectors, horizon, cfg, stop=None, min_periods=0):
    """Approximants ``z_Y(t_m) / z_W(t_m)`` at ``t_m = t' + m`` for each column of ``vectors``.

    With ``stop``, the integration runs in chunks of a few periods and ends
    early once ``min_periods`` are done and three successive differences of
    every approximant are below ``stop``; ``horizon`` is then only a cap.
    """
    N = sys.N
    vectors = np.asarray(vectors, dtype=float).reshape(N, -1)
    K = vectors.shape[1]
    forcing = np.concatenate([np.zeros((N, 1)), vectors], axis=1)
    w = np.concatenate([[1.0], np.zeros((N + 1) * (K + 1))])
    w[1:].reshape(N + 1, K + 1)[:N, 0] = 1.0
    n = int(math.floor(horizon))
    chunk = n if stop is None else EARLY_CHUNK
    first = n if stop is None else min(n, max(int(math.ceil(min_periods)), 4))
    step = _period_map(sys, forcing, cfg) if sys.periodic else _stepper(sys, forcing, cfg, w)
    m, z = 0, []
    while m < n:
        m_next = first if m == 0 else min(n, m + chunk)
        w = step(w, m, m_next, z)
        m = m_next
        if stop is not None and len(z) >= 4:
            zz = np.array(z[-4:])
            if _converged(zz[:, 1:] / zz[:, :1], stop):
                break
    z = np.array(z)
    times = sys.t_prime + np.arange(1, len(z) + 1, dtype=float)
    if np.any(np.abs(z[-1, 0]) < 1e-300):
        raise HNearZero("z_W vanished at the end of the horizon")
    return times, z[:, 1:] / z[:, :1], z[:, 0]


def _converged(seq, tol):
    d = np.abs(np.diff(seq[-4:], axis=0))
    return d.shape[0] >= 3 and bool(np.all(d < tol))


@dataclass
class PsiResult:
    value: float
    approximants: np.ndarray
    times: np.ndarray


def _prepare(sys, horizon, minimum):
    const = check_Hstab(sys)
    if horizon is not None and horizon < minimum / const.alpha:
        raise ValueError(f"horizon must be at least {minimum}/alpha = {minimum / const.alpha:.3g}")
    return const, horizon


def _cfg_early(const, horizon, tol, cfg):
    """Trailing ``_quotients`` arguments: a default horizon may stop once converged."""
    if horizon is not None:
        return horizon, cfg, None, 0
    return default_horizon(const.alpha), cfg, EARLY_FACTOR * tol, 10.0 / const.alpha


def psi(sys, Y, horizon=None, cfg=ode.DEFAULT, tol=PSI_TOL):
    """Neutral coordinate of ``Y`` along ``1`` at ``t'``."""
    Y = np.asarray(Y, dtype=float)
    const, horizon = _prepare(sys, horizon, 10.0)
    scale = tol * (1.0 + np.max(np.abs(Y)))
    times, q, zW = _quotients(sys, Y, *_cfg_early(const, horizon, scale, cfg))
    seq = q[:, 0]
    if abs(zW[-1]) / max(1.0, np.max(np.abs(zW))) < 1e-12:
        raise HNearZero("H(t_m, t') is numerically zero")
    if not _converged(seq, scale):
        raise NotConverged("psi approximants did not settle", sequence=seq)
    return PsiResult(float(seq[-1]), seq, times)


def psi_covector(sys, horizon=None, cfg=ode.DEFAULT, tol=PSI_TOL):
    """Row vector ``l`` with ``psi(Y) = l @ Y``, from one integration with unit forcings."""
    const, horizon = _prepare(sys, horizon, 10.0)
    times, q, _ = _quotients(sys, np.eye(sys.N), *_cfg_early(const, horizon, tol, cfg))
    if not _converged(q, tol):
        raise NotConverged("psi covector did not settle", sequence=q)
    return q[-1]


@dataclass
class NormalizingSolution:
    V0: np.ndarray
    inf_norm: float
    sup_norm: float
    trajectory: ode.Trajectory


def normalizing_solution(sys, candidates=None, horizon=None, cfg=ode.DEFAULT, floor=1e-2):
    """First candidate whose solution norm stays within ``[floor, 1/floor] * |V0|``.

    Over a finite horizon this is a surrogate for being bounded away from
    zero and infinity; decaying candidates fall below the floor.
    """
    const, horizon = _prepare(sys, horizon, 20.0)
    horizon = default_horizon(const.alpha) if horizon is None else horizon
    if candidates is None:
        candidates = [np.ones(sys.N)]
    grid = sys.t_prime + np.linspace(0.0, horizon, int(16 * horizon) + 1)[1:-1]
    for V0 in candidates:
        V0 = np.asarray(V0, dtype=float)
        n0 = np.linalg.norm(V0)
        if n0 == 0:
            continue
        traj = flow_columns(sys, V0, sys.t_prime, sys.t_prime + horizon, cfg, grid)
        norms = np.linalg.norm(traj.states, axis=1)
        lo, hi = float(norms.min()), float(norms.max())
        if lo >= floor * n0 and hi <= n0 / floor:
            return NormalizingSolution(V0, lo, hi, traj)
    raise NotFound("every candidate decays or grows over the horizon")


def linear_form_L(sys, Y, V0, horizon=None, cfg=ode.DEFAULT, tol=PSI_TOL):
    """``L(Y) = psi(Y) / psi(V(t'))``; both quotients share one integration."""
    Y = np.asarray(Y, dtype=float)
    V0 = np.asarray(V0, dtype=float)
    const, horizon = _prepare(sys, horizon, 10.0)
    scale = tol * (1.0 + max(np.max(np.abs(Y)), np.max(np.abs(V0))))
    times, q, _ = _quotients(sys, np.stack([Y, V0], axis=1),
                             *_cfg_early(const, horizon, scale, cfg))
    if not _converged(q, scale):
        raise NotConverged("L approximants did not settle", sequence=q)
    pv = q[-1, 1]
    if abs(pv) < 1e-10:
        raise PsiVanishing(f"|psi(V(t'))| = {abs(pv):.3e}")
    return float(q[-1, 0] / pv)


def form_covector(sys, V0, horizon=None, cfg=ode.DEFAULT, tol=PSI_TOL):
    """Row vector of ``L`` in the standard basis."""
    V0 = np.asarray(V0, dtype=float)
    const, horizon = _prepare(sys, horizon, 10.0)
    scale = tol * (1.0 + np.max(np.abs(V0)))
    vecs = np.concatenate([np.eye(sys.N), V0[:, None]], axis=1)
    times, q, _ = _quotients(sys, vecs, *_cfg_early(const, horizon, scale, cfg))
    if not _converged(q, scale):
        raise NotConverged("L covector did not settle", sequence=q)
    if abs(q[-1, -1]) < 1e-10:
        raise PsiVanishing(f"|psi(V(t'))| = {abs(q[-1, -1]):.3e}")
    return q[-1, :-1] / q[-1, -1]


def form_bound(sys, V0, horizon=None, cfg=ode.DEFAULT):
    """``K_hat = sup |L(Y)| / |Y|``, the Euclidean norm of the covector."""
    return float(np.linalg.norm(form_covector(sys, V0, horizon, cfg)))


# --- decomposition and decay certification ------------------------------

def fit_log_linear(t, y):
    """Least-squares slope, intercept and r^2 of ``log y`` against ``t``."""
    t = np.asarray(t, dtype=float)
    ly = np.log(np.asarray(y, dtype=float))
    A = np.vstack([t, np.ones_like(t)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * t + icpt)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else float("nan")
    return float(slope), float(icpt), r2


@dataclass
class DecompositionResult:
    mode: str
    psi_value: float
    times: np.ndarray = field(repr=False)
    neutral_part: np.ndarray = field(repr=False)
    stable_part: np.ndarray = field(repr=False)
    identity_residual: float
    fitted_beta: float
    fit_r2: float
    beta_requested: float
    certified: bool

    @property
    def stable_norms(self):
        return np.linalg.norm(self.stable_part, axis=1)

    def to_dict(self):
        return {"mode": self.mode, "psi_value": self.psi_value,
                "identity_residual": self.identity_residual,
                "fitted_beta": self.fitted_beta, "fit_r2": self.fit_r2,
                "beta_requested": self.beta_requested, "certified": self.certified,
                "horizon": float(self.times[-1] - self.times[0])}


def decompose(sys, Y, s_end=None, mode="general", cfg=ode.DEFAULT, beta=None, V0=None,
              horizon=None, samples_per_period=16, strict=False):
    """Split ``R(s; t') Y`` into its neutral and exponentially decaying parts.

    The decay rate is fitted on the norms of the stable part sampled at
    whole periods in the second half of ``[t', t' + s_end]``; stroboscopic
    sampling removes the periodic modulation of the norm.  Certification
    requires ``fitted_beta >= beta`` and ``r^2 > 0.99``.
    """
    Y = np.asarray(Y, dtype=float)
    const = check_Hstab(sys)
    beta = const.beta if beta is None else beta
    if s_end is None:
        s_end = max(8.0, math.ceil(10.0 / const.alpha))
    if mode == "general":
        coef = psi(sys, Y, horizon, cfg).value
        v0 = np.ones(sys.N)
    elif mode == "normalizing":
        v0 = normalizing_solution(sys, horizon=horizon, cfg=cfg).V0 if V0 is None else np.asarray(V0, float)
        coef = linear_form_L(sys, Y, v0, horizon, cfg)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    t0 = sys.t_prime
    grid = t0 + np.arange(1, int(samples_per_period * s_end)) / samples_per_period
    cols = np.stack([Y, v0, Y - coef * v0], axis=1)
    traj = flow_columns(sys, cols, t0, t0 + s_end, cfg, grid)
    times = np.concatenate([[t0], grid, [t0 + s_end]])
    states = np.array([traj.at(t) for t in times])
    full, neutral, stable = states[:, :, 0], coef * states[:, :, 1], states[:, :, 2]
    ny = max(np.linalg.norm(Y), 1e-300)
    residual = float(np.max(np.linalg.norm(full - neutral - stable, axis=1)) / ny)

    norms = np.linalg.norm(stable, axis=1)
    k_periods = np.arange(math.ceil(s_end / 2), math.floor(s_end) + 1)
    t_fit = t0 + k_periods
    n_fit = np.array([np.linalg.norm(traj.at(t)[:, 2]) for t in t_fit])
    if len(t_fit) >= 2 and np.all(n_fit > 0):
        slope, _, r2 = fit_log_linear(t_fit, n_fit)
        fitted = -slope
    else:
        fitted, r2 = float("nan"), float("nan")
    certified = bool(np.isfinite(fitted) and fitted >= beta and r2 > 0.99)
    res = DecompositionResult(mode, float(coef), times, neutral, stable, residual,
                              float(fitted), float(r2), float(beta), certified)
    if strict and not certified:
        raise CertificationFailed(f"fitted beta {fitted:.4g} (r2 {r2:.4g}) vs requested {beta:.4g}",
                                  result=res)
    return res


def psi_invariance_check(sys, Y, t, s, horizon=None, cfg=ode.DEFAULT):
    """``|psi_t(Y) - psi_s(R(s; t) Y)|``."""
    if s == t:
        return 0.0
    Y = np.asarray(Y, dtype=float)
    sys_t = replace(sys, t_prime=t)
    sys_s = replace(sys, t_prime=s)
    RY = fundamental_R(sys_t, t, s, cfg) @ Y
    return abs(psi(sys_t, Y, horizon, cfg).value - psi(sys_s, RY, horizon, cfg).value)


def form_invariance_check(sys, Y, V0, t, s, horizon=None, cfg=ode.DEFAULT):
    """``|L_t(Y) - L_s(R(s; t) Y)|`` with the normalizing solution carried to ``s``."""
    if s == t:
        return 0.0
    Y = np.asarray(Y, dtype=float)
    sys_t = replace(sys, t_prime=t)
    sys_s = replace(sys, t_prime=s)
    R = fundamental_R(sys_t, t, s, cfg)
    return abs(linear_form_L(sys_t, Y, V0, horizon, cfg)
               - linear_form_L(sys_s, R @ Y, R @ np.asarray(V0, float), horizon, cfg))


def d_star_search(sys, beta=None, seed=0, Y=None, D_max=0.5, iters=8, cfg=ode.DEFAULT):
    """Largest tested ``||zeta||`` for which random-trig perturbations still certify decay."""
    const = check_Hstab(sys)
    beta = const.beta if beta is None else beta
    if Y is None:
        Y = np.random.default_rng(seed).normal(size=sys.N)

    def passes(D):
        try:
            res = decompose(sys.with_zeta(ZetaSpec.random_trig(sys.N, D, seed)), Y, cfg=cfg,
                            beta=beta)
        except SyncStabError:
            return False
        return res.certified

    if passes(D_max):
        return D_max
    lo, hi = 0.0, D_max
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return lo


# --- the comparison function Delta -------------------------------------

def delta_periodic(sys, beta, D, L, t, n=2048):
    """Closed-form periodic solution of ``Delta' = (b + beta) Delta + D L``."""
    alpha = -sys.b.mean()
    if not 0 < beta < alpha:
        raise BetaOutOfRange(f"beta={beta} not in (0, {alpha})")
    if D == 0:
        return 0.0
    t = float(t)
    s = np.linspace(t, t + 1.0, n + 1)
    inner = sys.b.integral(s, t + 1.0) + beta * (t + 1.0 - s)
    h = 1.0 / n
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    integral = h / 3.0 * float(w @ np.exp(inner))
    return D * L * integral / (1.0 - math.exp(beta - alpha))


@dataclass
class DeltaReport:
    beta: float
    D: float
    L: float
    max_delta: float
    min_delta: float
    ode_residual: float
    periodicity_residual: float
    D0: float

    @property
    def below_one(self):
        return self.max_delta < 1.0

    def to_dict(self):
        d = dict(self.__dict__)
        d["below_one"] = self.below_one
        return d


def delta_report(sys, beta, D, L, n_grid=32, h=0.05):
    """Positivity, periodicity and ODE residual of ``Delta`` on a grid of one period.

    The ODE residual uses the integral form
    ``Delta(t+h) - Delta(t) - int_t^{t+h} [(b+beta) Delta + D L]`` divided by ``h``,
    with Gauss-Legendre nodes for the integral.
    """
    ts = np.arange(n_grid) / n_grid
    vals = np.array([delta_periodic(sys, beta, D, L, t) for t in ts])
    per = max(abs(delta_periodic(sys, beta, D, L, t + 1.0) - v) for t, v in zip(ts[::4], vals[::4]))
    xg, wg = np.polynomial.legendre.leggauss(16)
    res = 0.0
    for t in ts[::2]:
        nodes = t + 0.5 * h * (xg + 1.0)
        rhs = np.array([(sys.b(u) + beta) * delta_periodic(sys, beta, D, L, u) + D * L for u in nodes])
        integral = 0.5 * h * float(wg @ rhs)
        lhs = delta_periodic(sys, beta, D, L, t + h) - delta_periodic(sys, beta, D, L, t)
        res = max(res, abs(lhs - integral) / h)
    unit_max = float(vals.max()) / (D * L) if D * L > 0 else float("nan")
    D0 = 1.0 / (L * unit_max) if D * L > 0 else float("inf")
    return DeltaReport(beta, D, L, float(vals.max()), float(vals.min()), res, per, D0)
