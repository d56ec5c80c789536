"""Contraction onto the locked orbit along the stable chart.

Points on the local stable chart through the locked state approach its
orbit at the diagonal rate, while a shift along the constant vector does
not decay.  Takes about a minute.
"""

import numpy as np

from syncstab import manifold as mf
from syncstab import sync
from syncstab.model import MeanFieldModel, PerturbationSpec, check_hypotheses

model = MeanFieldModel(5, kappa=0.05, perturbation=PerturbationSpec("random-trig", 0.01, 3))
orbit = sync.find_locked_orbit(model, 0.01 * np.arange(5))
X = orbit.X_star
print("diagonal alpha:", round(check_hypotheses(model).alpha, 5))

chart = mf.build_stable_chart(model, X, steps=2)
print("covector on the velocity:", chart.covector @ model.field(X))

rng = np.random.default_rng(1)
xis = np.array([chart.project(v) for v in rng.normal(size=(2, 5))])
xis = 1e-3 * xis / np.linalg.norm(xis, axis=1)[:, None]
for Y in chart(xis):
    res = mf.verify_contraction(model, X, Y, 40.0, strobe_period=orbit.period)
    print(f"kernel direction: rate {res.fitted_rate:.4f}, r2 {res.fit_r2:.4f}, K_hat {res.K_hat:.3f}")
print(f"chart Richardson estimate: {chart.richardson_error:.1e}")

res = mf.verify_contraction(model, X, X + 1e-3, 40.0, strobe_period=orbit.period)
print(f"constant shift: rate {res.fitted_rate:.1e}")

start = X + 0.01 * np.array([1.0, -1.0, 0.5, -0.5, 0.0])
res = mf.limit_cycle_convergence(model, orbit, start, 60.0)
print(f"distance to the orbit decays at {res.fitted_rate:.4f}")
