"""The Gaussian-mixture oracle gives exact scores; check it against finite differences.

Also shows that shifting the noise prediction by the watermark correction
moves the posterior-mean estimate by exactly lambda * delta.
"""

import numpy as np

from driftmark import InjectionConfig, build_schedule, corrected_eps, default_oracle, reparameterize

s = build_schedule("linear", 50)
o = default_oracle(8, 3, 4.0, seed=0)
rng = np.random.default_rng(0)
z, delta = rng.standard_normal((2, 8))
t, h = 17, 1e-5

score = o.score(s, z, t)
fd = np.array([(o.log_density(s, z + h * e, t) - o.log_density(s, z - h * e, t)) / (2 * h) for e in np.eye(8)])
print(f"score vs finite differences: max err {np.max(np.abs(score - fd)):.2e}")

tweedie = reparameterize(z, score, s, t, "score", "z0")
print(f"posterior mean vs Tweedie:   max err {np.max(np.abs(o.posterior_mean(s, z, t) - tweedie)):.2e}")

eps = reparameterize(z, score, s, t, "score", "eps")
cfg = InjectionConfig(delta, 0.7, 1, s.T)
shift = reparameterize(z, corrected_eps(eps, cfg, s, t), s, t, "eps", "z0") - tweedie
print(f"z0 estimate shift minus 0.7*delta: max err {np.max(np.abs(shift - 0.7 * delta)):.2e}")
