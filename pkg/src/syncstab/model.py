"""Mean-field oscillator models, their partial derivatives and hypothesis checks.

The field of oscillator ``i`` is ``F(X, x_i) + H_i(X, x_i)`` with the
mean-field form

    F(X, x) = omega + kappa * sigma(X) * R(x),   sigma(X) = mean_j I(x_j),

where ``I`` (influence) and ``R`` (response) are finite Fourier series of
period one.  The Winfree instance uses ``I(y) = 1 + cos(2 pi y)`` and
``R(x) = -sin(2 pi x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DiagonalVanishing, NonPeriodicUnbounded, QuadratureNotConverged
from .ode import quadrature

TWO_PI = 2.0 * np.pi

# strict inequalities in the hypothesis checks use this margin
STRICT_MARGIN = 1e-10


class TrigSeries:
    """Finite Fourier series of period one.

    ``f(t) = const + sum_k cos_k cos(2 pi k t) + sin_k sin(2 pi k t)``
    """

    def __init__(self, const=0.0, cos=None, sin=None):
        self.const = float(const)
        cos = dict(cos or {})
        sin = dict(sin or {})
        ks = sorted(set(cos) | set(sin))
        if any(int(k) != k or k < 1 for k in ks):
            raise ValueError("harmonic indices must be positive integers")
        self.ks = np.array(ks, dtype=float)
        self.a = np.array([float(cos.get(k, 0.0)) for k in ks])
        self.b = np.array([float(sin.get(k, 0.0)) for k in ks])

    @classmethod
    def from_spec(cls, spec):
        """Build from ``{"fourier": [["const", c], ["cos", k, c], ["sin", k, c]]}``."""
        if isinstance(spec, dict):
            terms = spec["fourier"]
        else:
            terms = spec
        const, cos, sin = 0.0, {}, {}
        for term in terms:
            kind = term[0]
            if kind == "const":
                const += float(term[1])
            elif kind in ("cos", "sin"):
                k, c = int(term[1]), float(term[2])
                target = cos if kind == "cos" else sin
                target[k] = target.get(k, 0.0) + c
            else:
                raise ValueError(f"unknown Fourier term {kind!r}")
        return cls(const, cos, sin)

    def to_spec(self):
        terms = [["const", self.const]]
        for k, a, b in zip(self.ks, self.a, self.b):
            if a:
                terms.append(["cos", int(k), float(a)])
            if b:
                terms.append(["sin", int(k), float(b)])
        return {"fourier": terms}

    def __call__(self, t):
        return self.derivative(t, 0)

    def derivative(self, t, order=1):
        t = np.asarray(t, dtype=float)
        if self.ks.size == 0:
            return np.full(t.shape, self.const if order == 0 else 0.0)
        w = TWO_PI * self.ks
        ph = t[..., None] * w
        c, s = np.cos(ph), np.sin(ph)
        # d^n/dt^n of (a cos + b sin) cycles with period 4
        r = order % 4
        scale = w**order
        if r == 0:
            val = self.a * c + self.b * s
        elif r == 1:
            val = -self.a * s + self.b * c
        elif r == 2:
            val = -self.a * c - self.b * s
        else:
            val = self.a * s - self.b * c
        out = (scale * val).sum(axis=-1)
        if order == 0:
            out = out + self.const
        return out

    def value_and_slope(self, t):
        """``(f(t), f'(t))`` from a single evaluation of the harmonics."""
        t = np.asarray(t, dtype=float)
        if self.ks.size == 0:
            return np.full(t.shape, self.const), np.zeros(t.shape)
        w = TWO_PI * self.ks
        ph = t[..., None] * w
        c, s = np.cos(ph), np.sin(ph)
        f = (self.a * c + self.b * s).sum(axis=-1) + self.const
        df = (w * (self.b * c - self.a * s)).sum(axis=-1)
        return f, df

    def primitive(self, t):
        t = np.asarray(t, dtype=float)
        out = self.const * t
        if self.ks.size:
            w = TWO_PI * self.ks
            ph = t[..., None] * w
            out = out + ((self.a * np.sin(ph) - self.b * np.cos(ph)) / w).sum(axis=-1)
        return out

    def integral(self, s, t):
        """Exact value of the integral of the series from ``s`` to ``t``."""
        return self.primitive(t) - self.primitive(s)

    def mean(self):
        return self.const

    def sup_abs(self, n=4096):
        grid = np.arange(n) / n
        return float(np.max(np.abs(self(grid))))

    def __add__(self, other):
        cos = {int(k): a for k, a in zip(self.ks, self.a)}
        sin = {int(k): b for k, b in zip(self.ks, self.b)}
        for k, a, b in zip(other.ks, other.a, other.b):
            cos[int(k)] = cos.get(int(k), 0.0) + a
            sin[int(k)] = sin.get(int(k), 0.0) + b
        return TrigSeries(self.const + other.const, cos, sin)

    def scaled(self, c):
        return TrigSeries(c * self.const,
                          {int(k): c * a for k, a in zip(self.ks, self.a)},
                          {int(k): c * b for k, b in zip(self.ks, self.b)})

    def __repr__(self):
        return f"TrigSeries({self.to_spec()['fourier']})"


PERTURBATION_KINDS = ("zero", "trig-diag-periodic", "random-trig")


@dataclass(frozen=True)
class PerturbationSpec:
    """Perturbation ``H_i(X, x)`` of the mean-field system.

    ``trig-diag-periodic`` is the symmetric choice ``H_i = r/(2 pi) sin(2 pi x)``.
    ``random-trig`` draws, from ``seed``, per-oscillator phases and weights::

        H_i = r/(2 pi) [w1 cos(2 pi (x + p_i)) + w2 sin(2 pi (X_{i+1} + q_i))
                        + w3 sin(2 pi sqrt(2) x)]

    with ``|w1| + |w2| + sqrt(2) |w3| <= 1`` so that both ``|H|`` and every
    partial derivative stay below ``r``.  ``w3`` is nonzero only when
    ``one_periodic`` is false; the incommensurate frequency breaks the
    diagonal periodicity.
    """

    kind: str = "zero"
    r: float = 0.0
    seed: int = 0
    one_periodic: bool = True
    _w: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    _phase: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.r < 0:
            raise ValueError("perturbation amplitude must be non-negative")

    def bind(self, N):
        """Draw the random parameters for ``N`` oscillators (idempotent)."""
        if self.kind != "random-trig" or (self._w is not None and self._w.shape[0] == N):
            return self
        rng = np.random.default_rng(self.seed)
        w = rng.uniform(-1.0, 1.0, size=(N, 3))
        if self.one_periodic:
            w[:, 2] = 0.0
        norm = np.abs(w[:, 0]) + np.abs(w[:, 1]) + math.sqrt(2.0) * np.abs(w[:, 2])
        w = w / norm.max()
        phase = rng.uniform(0.0, 1.0, size=(N, 2))
        object.__setattr__(self, "_w", w)
        object.__setattr__(self, "_phase", phase)
        return self

    @property
    def is_zero(self):
        return self.kind == "zero" or self.r == 0.0

    def value(self, X, x):
        """``H_i(X, x_i)`` for ``X`` and ``x`` of shape (..., N)."""
        X = np.asarray(X, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            return np.zeros(np.broadcast_shapes(X.shape, x.shape))
        amp = self.r / TWO_PI
        if self.kind == "trig-diag-periodic":
            return amp * np.sin(TWO_PI * x) + 0.0 * X
        w, p = self._w, self._phase
        nb = np.roll(X, -1, axis=-1)
        out = w[:, 0] * np.cos(TWO_PI * (x + p[:, 0]))
        out = out + w[:, 1] * np.sin(TWO_PI * (nb + p[:, 1]))
        out = out + w[:, 2] * np.sin(TWO_PI * math.sqrt(2.0) * x)
        return amp * out

    def partials(self, X, x):
        """Return ``(dH_i/dx, dH_i/dX_j)`` with shapes (..., N) and (..., N, N)."""
        X = np.asarray(X, dtype=float)
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(X.shape, x.shape)
        N = shape[-1]
        dX = np.zeros(shape + (N,))
        if self.is_zero:
            return np.zeros(shape), dX
        if self.kind == "trig-diag-periodic":
            return self.r * np.cos(TWO_PI * x) + 0.0 * X, dX
        w, p = self._w, self._phase
        dx = -self.r * w[:, 0] * np.sin(TWO_PI * (x + p[:, 0]))
        dx = dx + self.r * math.sqrt(2.0) * w[:, 2] * np.cos(TWO_PI * math.sqrt(2.0) * x)
        nb = np.roll(X, -1, axis=-1)
        d_nb = self.r * w[:, 1] * np.cos(TWO_PI * (nb + p[:, 1]))
        idx = np.arange(N)
        dX[..., idx, (idx + 1) % N] = d_nb
        return dx + 0.0 * X, dX

    def on_state(self, X):
        """``H_i(X, x_i)`` with both partials at ``x = X``, sharing the trig evaluations."""
        X = np.asarray(X, dtype=float)
        N = X.shape[-1]
        dX = np.zeros(X.shape + (N,))
        if self.is_zero:
            return np.zeros(X.shape), np.zeros(X.shape), dX
        if self.kind == "trig-diag-periodic":
            ph = TWO_PI * X
            return self.r / TWO_PI * np.sin(ph), self.r * np.cos(ph), dX
        w, p = self._w, self._phase
        idx = np.arange(N)
        nxt = (idx + 1) % N
        p1, p2 = TWO_PI * (X + p[:, 0]), TWO_PI * (X[..., nxt] + p[:, 1])
        r = self.r
        H = r / TWO_PI * (w[:, 0] * np.cos(p1) + w[:, 1] * np.sin(p2))
        dx = -r * w[:, 0] * np.sin(p1)
        if not self.one_periodic:
            p3 = TWO_PI * math.sqrt(2.0) * X
            H = H + r / TWO_PI * w[:, 2] * np.sin(p3)
            dx = dx + r * math.sqrt(2.0) * w[:, 2] * np.cos(p3)
        dX[..., idx, nxt] = r * w[:, 1] * np.cos(p2)
        return H, dx, dX

    def to_dict(self):
        return {"kind": self.kind, "r": self.r, "seed": self.seed,
                "one_periodic": self.one_periodic}


@dataclass(frozen=True)
class MeanFieldModel:
    N: int
    family: str = "winfree"
    omega: float = 1.0
    kappa: float = 0.0
    influence: TrigSeries = None
    response: TrigSeries = None
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be positive")
        if self.family == "winfree":
            object.__setattr__(self, "influence", TrigSeries(1.0, {1: 1.0}))
            object.__setattr__(self, "response", TrigSeries(0.0, sin={1: -1.0}))
        elif self.family == "custom-trig":
            if self.influence is None or self.response is None:
                raise ValueError("custom-trig needs influence and response series")
        else:
            raise ValueError(f"unknown family {self.family!r}")
        self.perturbation.bind(self.N)

    # --- the unperturbed field and its partials -------------------------

    def sigma(self, X):
        return np.mean(self.influence(X), axis=-1)

    def F(self, X, x):
        """``F(X, x)``; ``X`` has shape (..., N) and ``x`` broadcasts against X[..., 0]."""
        return self.omega + self.kappa * self.sigma(X) * self.response(x)

    def dF_dx(self, X, x):
        """Partial derivative in the own-phase slot (index N+1)."""
        return self.kappa * self.sigma(X) * self.response.derivative(x)

    def dF_dX(self, X, x):
        """Partials ``d F / d X_j`` with shape (..., N)."""
        X = np.asarray(X, dtype=float)
        x = np.asarray(x, dtype=float)
        return (self.kappa / self.N) * self.influence.derivative(X) * self.response(x)[..., None]

    def hessian(self, X, x):
        """All second partials of ``F`` in the variables ``(X, x)``, shape (..., N+1, N+1)."""
        X = np.asarray(X, dtype=float)
        x = np.asarray(x, dtype=float)
        N = self.N
        shape = np.broadcast_shapes(X.shape[:-1], x.shape)
        out = np.zeros(shape + (N + 1, N + 1))
        k = self.kappa
        R0, R1, R2 = (self.response.derivative(x, n) for n in (0, 1, 2))
        I1 = self.influence.derivative(X, 1)
        I2 = self.influence.derivative(X, 2)
        idx = np.arange(N)
        out[..., idx, idx] = (k / N) * I2 * R0[..., None]
        out[..., idx, N] = (k / N) * I1 * R1[..., None]
        out[..., N, idx] = out[..., idx, N]
        out[..., N, N] = k * self.sigma(X) * R2
        return out

    # --- the full vector field of system (P) -----------------------------

    def field(self, X):
        X = np.asarray(X, dtype=float)
        sig = self.sigma(X)[..., None]
        out = self.omega + self.kappa * sig * self.response(X)
        if not self.perturbation.is_zero:
            out = out + self.perturbation.value(X, X)
        return out

    def jacobian(self, X):
        """Jacobian of :meth:`field`; ``g_ii`` collects both the own-phase and the X_i partials."""
        X = np.asarray(X, dtype=float)
        N = self.N
        R0 = self.response(X)
        J = (self.kappa / N) * R0[..., :, None] * self.influence.derivative(X)[..., None, :]
        idx = np.arange(N)
        J[..., idx, idx] += self.kappa * self.sigma(X)[..., None] * self.response.derivative(X)
        if not self.perturbation.is_zero:
            dx, dX = self.perturbation.partials(X, X)
            J = J + dX
            J[..., idx, idx] += dx
        return J

    def local(self, X, mu):
        """Field, Jacobian, ``F(X, mu)`` and the diagonal coefficients ``b(mu), a(mu)``.

        Batched over leading axes of ``X`` (..., N) and ``mu`` (...); used in
        inner loops where separate calls would repeat the trig evaluations.
        """
        X = np.asarray(X, dtype=float)
        mu = np.asarray(mu, dtype=float)
        N = self.N
        k = self.kappa
        XM = np.concatenate([X, mu[..., None]], axis=-1)
        I0, I1 = self.influence.value_and_slope(XM)
        R0, R1 = self.response.value_and_slope(XM)
        sig = I0[..., :N].mean(axis=-1)
        field = self.omega + k * sig[..., None] * R0[..., :N]
        J = (k / N) * R0[..., :N, None] * I1[..., None, :N]
        idx = np.arange(N)
        J[..., idx, idx] += k * sig[..., None] * R1[..., :N]
        if not self.perturbation.is_zero:
            H, dx, dX = self.perturbation.on_state(X)
            field = field + H
            J = J + dX
            J[..., idx, idx] += dx
        Im, Im1, Rm, Rm1 = I0[..., N], I1[..., N], R0[..., N], R1[..., N]
        F_mu = self.omega + k * sig * Rm
        Fd = self.omega + k * Im * Rm
        if np.any(Fd <= 0):
            raise DiagonalVanishing("F(mu 1, mu) <= 0")
        b = k * Im * Rm1 / Fd
        a = np.repeat(((k / N) * Im1 * Rm / Fd)[..., None], N, axis=-1)
        return field, J, F_mu, b, a

    # --- diagonal quantities ---------------------------------------------

    def diagonal_profile(self, s):
        """Return ``F(s1, s)``, ``d_{N+1}F(s1, s)`` and ``d_jF(s1, s)``."""
        s = np.asarray(s, dtype=float)
        X = np.repeat(s[..., None], self.N, axis=-1)
        return self.F(X, s), self.dF_dx(X, s), self.dF_dX(X, s)

    def to_dict(self):
        d = {"N": self.N, "family": self.family, "omega": self.omega, "kappa": self.kappa,
             "perturbation": self.perturbation.to_dict()}
        if self.family == "custom-trig":
            d["influence"] = self.influence.to_spec()
            d["response"] = self.response.to_spec()
        return d


def model_from_config(cfg):
    """Build a :class:`MeanFieldModel` from its JSON document."""
    pert = PerturbationSpec(**cfg.get("perturbation", {"kind": "zero"}))
    kw = {}
    if cfg.get("family", "winfree") == "custom-trig":
        kw["influence"] = TrigSeries.from_spec(cfg["influence"])
        kw["response"] = TrigSeries.from_spec(cfg["response"])
    return MeanFieldModel(N=int(cfg["N"]), family=cfg.get("family", "winfree"),
                          omega=float(cfg.get("omega", 1.0)),
                          kappa=float(cfg.get("kappa", 0.0)),
                          perturbation=pert, **kw)


def eval_field(model, X, x):
    """``F(X, x)`` for a single state; the perturbation is added by the caller."""
    return float(model.F(np.asarray(X, dtype=float), float(x)))


def diagonal_profile(model, s):
    Fd, dN1, dj = model.diagonal_profile(float(s))
    return float(Fd), float(dN1), np.asarray(dj)


def coefficients_ab(model, mu):
    """Coefficients ``b(mu)`` and ``a_j(mu)`` of the diagonal linearization.

    Vectorized in ``mu``; ``a`` gains a trailing axis of length N.
    """
    Fd, dN1, dj = model.diagonal_profile(mu)
    if np.any(Fd <= 0):
        raise DiagonalVanishing(f"F(mu 1, mu) <= 0 at mu={mu}")
    return dN1 / Fd, dj / np.asarray(Fd)[..., None]


def log_diag_derivative(model, mu):
    """``d/dmu log F(mu 1, mu)`` evaluated by the chain rule through the trig series."""
    mu = np.asarray(mu, dtype=float)
    Fd, dN1, dj = model.diagonal_profile(mu)
    return (dN1 + dj.sum(axis=-1)) / Fd


# --- the B seminorm ------------------------------------------------------

def _sample_B(dim, samples, seed, shift=0.0):
    """Points of B: ``c 1 + u`` with ``c`` in one diagonal period and ``u`` in the unit cube.

    Any point of B is ``y_min 1 + u`` with ``u`` in [0, 1]^dim, so for a
    1-periodic integrand this set covers B.  Random points come first from a
    single stream so that larger sample counts extend smaller ones.
    """
    rng = np.random.default_rng(seed)
    c = rng.random(samples) + shift
    u = rng.random((samples, dim))
    pts = [c[:, None] + u]
    grid_c = np.arange(64) / 64 + shift
    pts.append(np.repeat(grid_c[:, None], dim, axis=1))
    per_axis = 4
    if per_axis**dim <= 4096:
        axes = np.meshgrid(*[np.linspace(0.0, 1.0, per_axis)] * dim, indexing="ij")
        cube = np.stack([a.ravel() for a in axes], axis=1)
        for cc in grid_c[::8]:
            pts.append(cc + cube)
    return np.concatenate(pts, axis=0)


def seminorm_B(g, dim, samples=4096, seed=0, periodic=True):
    """Sampled lower estimate of ``sup_{y in B} max_i |g_i(y)|``.

    ``g`` maps an array of shape (M, dim) to shape (M,) or (M, p).  For a
    function that is not 1-periodic, a few further diagonal windows are
    scanned; growth across them raises :class:`NonPeriodicUnbounded`.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")

    def sup(shift):
        vals = np.asarray(g(_sample_B(dim, samples, seed, shift)))
        return float(np.max(np.abs(vals))) if vals.size else 0.0

    est = sup(0.0)
    if not periodic:
        windows = [est] + [sup(float(k)) for k in (1, 2, 4, 8)]
        if max(windows) > est * (1 + 1e-6) + 1e-12 and windows[-1] > windows[0] * 1.01:
            raise NonPeriodicUnbounded(max(windows))
        est = max(windows)
    return est


def field_norms(model, samples=4096, seed=0):
    """Sampled ``||F||_B``, ``||dF||_B`` and ``||d^2F||_B`` over (X, x) in R^{N+1}."""
    N = model.N

    def split(y):
        return y[:, :N], y[:, N]

    def g0(y):
        X, x = split(y)
        return model.F(X, x)

    def g1(y):
        X, x = split(y)
        return np.concatenate([model.dF_dX(X, x), model.dF_dx(X, x)[:, None]], axis=1)

    def g2(y):
        X, x = split(y)
        return model.hessian(X, x).reshape(len(y), -1)

    return tuple(seminorm_B(g, N + 1, samples, seed) for g in (g0, g1, g2))


def perturbation_norms(model, samples=4096, seed=0):
    """Sampled ``||H||_B`` and ``||dH||_B`` of the model's perturbation."""
    N = model.N
    pert = model.perturbation
    periodic = pert.one_periodic or pert.kind != "random-trig"

    def g0(y):
        X, x = y[:, :N], y[:, N]
        return pert.value(X, np.repeat(x[:, None], N, axis=1))

    def g1(y):
        X, x = y[:, :N], y[:, N]
        dx, dX = pert.partials(X, np.repeat(x[:, None], N, axis=1))
        return np.concatenate([dx, dX.reshape(len(y), -1)], axis=1)

    return (seminorm_B(g0, N + 1, samples, seed, periodic),
            seminorm_B(g1, N + 1, samples, seed, periodic))


# --- hypotheses (H), (H*) ------------------------------------------------

@dataclass
class HypothesisReport:
    min_F_diag: float
    h_star_integral: float
    alpha: float
    zero_sum_residual: float
    norm_F: float
    norm_dF: float
    norm_d2F: float
    lipschitz_L: float
    periodicity_residual: float
    satisfied: dict

    def to_dict(self):
        d = dict(self.__dict__)
        d["satisfied"] = dict(self.satisfied)
        return d


def min_diagonal_field(model, n_grid=4096):
    """Minimum of ``F(s1, s)`` over one period: dense grid then golden-section refinement."""
    grid = np.arange(n_grid) / n_grid
    vals = model.diagonal_profile(grid)[0]
    k = int(np.argmin(vals))
    h = 1.0 / n_grid

    def f(s):
        return float(model.diagonal_profile(s)[0])

    lo, hi = grid[k] - h, grid[k] + h
    if not (f(lo) > vals[k] and f(hi) > vals[k]):
        return float(vals[k])
    res = optimize.minimize_scalar(f, bracket=(lo, grid[k], hi), method="golden",
                                   options={"xtol": 1e-12})
    return min(float(res.fun), float(vals[k]))


def _diag_integrals(model, n):
    def b_fun(s):
        Fd, dN1, _ = model.diagonal_profile(s)
        return dN1 / Fd

    def sum_fun(s):
        return log_diag_derivative(model, s)

    return quadrature(b_fun, 0.0, 1.0, n), quadrature(sum_fun, 0.0, 1.0, n)


def check_hypotheses(model, quad_points=256, samples=4096, seed=0, tol=1e-8):
    if quad_points < 64:
        raise ValueError("quad_points must be at least 64")
    quad_points += quad_points % 2
    hs, zs = _diag_integrals(model, quad_points)
    hs2, zs2 = _diag_integrals(model, 2 * quad_points)
    if abs(hs2 - hs) > tol or abs(zs2 - zs) > tol:
        raise QuadratureNotConverged(max(abs(hs2 - hs), abs(zs2 - zs)))
    min_F = min_diagonal_field(model)

    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(256, model.N))
    x = rng.uniform(-1.0, 1.0, size=256)
    per_res = float(np.max(np.abs(model.F(X + 1.0, x + 1.0) - model.F(X, x))))

    nF, ndF, nd2F = field_norms(model, samples, seed)
    finite = all(np.isfinite(v) for v in (nF, ndF, nd2F))
    sat_H = bool(min_F > STRICT_MARGIN and per_res < 1e-10 and finite)
    sat_star = bool(hs2 < -STRICT_MARGIN)
    return HypothesisReport(
        min_F_diag=min_F, h_star_integral=float(hs2), alpha=float(-hs2),
        zero_sum_residual=float(abs(zs2)), norm_F=nF, norm_dF=ndF, norm_d2F=nd2F,
        lipschitz_L=nF + ndF + nd2F, periodicity_residual=per_res,
        satisfied={"H": sat_H, "H_star": sat_star},
    )
