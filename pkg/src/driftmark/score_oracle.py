"""Gaussian-mixture data distributions with exact diffused scores.

Under the VP forward process a component ``N(mu_k, s_k^2 I)`` diffuses to
``N(sqrt(abar) mu_k, (abar s_k^2 + 1 - abar) I)``. The marginal density, its
score and the posterior mean ``E[z_0 | z_t]`` are therefore available in
closed form, so this module can stand in for a trained noise predictor.

All functions accept a single latent of shape ``(d,)`` or a batch ``(..., d)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .schedule import NoiseSchedule

PARAMETERIZATIONS = ("score", "eps", "z0")


@dataclass(frozen=True, eq=False)
class ScoreOracle:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K,)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if not (len(w) == len(mu) == len(var)) or len(w) == 0:
            raise ValueError("weights, means and variances must have matching non-zero length")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(var <= 0):
            raise ValueError("component variances must be positive")
        for name, arr in (("weights", w), ("means", mu), ("variances", var)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def _diffused(self, s: NoiseSchedule, z, t: int):
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.dim:
            raise ValueError(f"latent has length {z.shape[-1]}, oracle dim is {self.dim}")
        ab = s.alpha_bar(t)
        v = ab * self.variances + 1.0 - ab  # (K,)
        diff = z[..., None, :] - math.sqrt(ab) * self.means  # (..., K, d)
        sq = np.einsum("...kd,...kd->...k", diff, diff)
        logp = np.log(self.weights) - 0.5 * sq / v - 0.5 * self.dim * np.log(2 * np.pi * v)
        return z, ab, v, diff, logp

    def log_density(self, s: NoiseSchedule, z, t: int):
        *_, logp = self._diffused(s, z, t)
        return logsumexp(logp, axis=-1)

    def responsibilities(self, s: NoiseSchedule, z, t: int) -> np.ndarray:
        *_, logp = self._diffused(s, z, t)
        return softmax(logp, axis=-1)

    def score(self, s: NoiseSchedule, z, t: int) -> np.ndarray:
        _, _, v, diff, logp = self._diffused(s, z, t)
        r = softmax(logp, axis=-1)
        return -np.einsum("...k,...kd->...d", r / v, diff)

    def score_jacobian(self, s: NoiseSchedule, z, t: int) -> np.ndarray:
        """Hessian of the log marginal, shape ``(..., d, d)``."""
        _, _, v, diff, logp = self._diffused(s, z, t)
        r = softmax(logp, axis=-1)
        m = -diff / v[:, None]  # per-component scores
        mbar = np.einsum("...k,...kd->...d", r, m)
        second = np.einsum("...k,...ki,...kj->...ij", r, m, m)
        diag = -np.einsum("...k,k->...", r, 1.0 / v)
        eye = np.eye(self.dim)
        return diag[..., None, None] * eye + second - mbar[..., :, None] * mbar[..., None, :]

    def eps(self, s: NoiseSchedule, z, t: int) -> np.ndarray:
        """Exact noise prediction ``-sqrt(1 - abar) * score``."""
        return -math.sqrt(1.0 - s.alpha_bar(t)) * self.score(s, z, t)

    def posterior_mean(self, s: NoiseSchedule, z, t: int) -> np.ndarray:
        """``E[z_0 | z_t]`` by per-component Gaussian conditioning.

        Computed without going through the score so it can cross-check it.
        """
        z, ab, v, _, logp = self._diffused(s, z, t)
        r = softmax(logp, axis=-1)
        gain = math.sqrt(ab) * self.variances / v  # (K,)
        comp = ((1.0 - ab) / v)[:, None] * self.means + gain[:, None] * z[..., None, :]
        return np.einsum("...k,...kd->...d", r, comp)

    def sample_data(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` clean latents from the mixture."""
        k = rng.choice(self.n_components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[k] + np.sqrt(self.variances[k])[:, None] * noise

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "components": [
                {"weight": float(w), "mean": mu.tolist(), "var": float(v)}
                for w, mu, v in zip(self.weights, self.means, self.variances)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreOracle":
        comps = d["components"]
        oracle = cls(
            [c["weight"] for c in comps],
            [c["mean"] for c in comps],
            [c["var"] for c in comps],
        )
        if oracle.dim != d.get("dim", oracle.dim):
            raise ValueError("declared dim does not match component means")
        return oracle

    @classmethod
    def from_json(cls, text: str) -> "ScoreOracle":
        return cls.from_dict(json.loads(text))


def standard_normal_oracle(dim: int) -> ScoreOracle:
    return ScoreOracle([1.0], np.zeros((1, dim)), [1.0])


def default_oracle(dim: int = 64, n_components: int = 3, mean_norm: float = 4.0, seed: int = 0) -> ScoreOracle:
    """Equal-weight mixture of unit-variance components with means of fixed norm."""
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((n_components, dim))
    means *= mean_norm / np.linalg.norm(means, axis=1, keepdims=True)
    weights = np.full(n_components, 1.0 / n_components)
    weights[-1] = 1.0 - weights[:-1].sum()
    return ScoreOracle(weights, means, np.ones(n_components))


def reparameterize(z, value, s: NoiseSchedule, t: int, src: str, dst: str) -> np.ndarray:
    """Convert a model output between score, noise and clean-latent form.

    Uses ``eps = -sqrt(1 - abar) * score`` and
    ``z0 = (z - sqrt(1 - abar) * eps) / sqrt(abar)``.
    """
    if src not in PARAMETERIZATIONS or dst not in PARAMETERIZATIONS:
        raise ValueError(f"unknown parameterization pair ({src!r}, {dst!r})")
    z = np.asarray(z, dtype=float)
    value = np.asarray(value, dtype=float)
    if z.shape[-1] != value.shape[-1]:
        raise ValueError("z and value must have the same trailing dimension")
    ab = s.alpha_bar(t)
    sa, sb = math.sqrt(ab), math.sqrt(1.0 - ab)

    if src == "score":
        eps = -sb * value
    elif src == "z0":
        eps = (z - sa * value) / sb
    else:
        eps = value

    if dst == "eps":
        return eps
    if dst == "score":
        return -eps / sb
    return (z - sb * eps) / sa


def log_density_t(o: ScoreOracle, s: NoiseSchedule, z, t: int):
    return o.log_density(s, z, t)


def exact_score(o: ScoreOracle, s: NoiseSchedule, z, t: int) -> np.ndarray:
    return o.score(s, z, t)


def posterior_mean(o: ScoreOracle, s: NoiseSchedule, z, t: int) -> np.ndarray:
    return o.posterior_mean(s, z, t)
