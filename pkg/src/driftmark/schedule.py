"""Discrete variance-preserving noise schedules.

Timesteps are 1-based: ``t = T`` is pure noise and ``t = 1`` is the last
denoising step. ``alpha_bar(0)`` is defined as 1 (the clean latent) for the
samplers' convenience, but the public coefficient queries reject ``t = 0``.

The continuous VP-SDE view identifies the per-step variance with the squared
diffusion coefficient, ``g^2(t) = beta_t``, so the forward drift is
``f(z, t) = -beta_t z / 2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("linear", "cosine")
COSINE_OFFSET = 0.008
MAX_BETA = 0.999


def default_beta_range(T: int) -> tuple[float, float]:
    """DDPM's (1e-4, 0.02) at T=1000, rescaled to ``T`` steps.

    The upper end is capped at ``MAX_BETA`` so very short schedules stay valid.
    """
    scale = 1000.0 / T
    return min(1e-4 * scale, 0.5), min(0.02 * scale, MAX_BETA)


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    T: int
    beta_min: float
    beta_max: float
    betas: np.ndarray = field(init=False, repr=False, compare=False)
    alphas: np.ndarray = field(init=False, repr=False, compare=False)
    alpha_bars: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if not 0.0 < self.beta_min <= self.beta_max < 1.0:
            raise ValueError(
                f"need 0 < beta_min <= beta_max < 1, got ({self.beta_min}, {self.beta_max})"
            )
        if self.kind == "linear":
            betas = np.linspace(self.beta_min, self.beta_max, self.T)
        else:
            betas = _cosine_betas(self.T)
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        for name, arr in (("betas", betas), ("alphas", alphas), ("alpha_bars", alpha_bars)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def _check(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise IndexError(f"timestep {t} outside [1, {self.T}]")
        return int(t)

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self._check(t) - 1])

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t) - 1])

    def abar(self, t: int) -> float:
        """Like :meth:`alpha_bar` but also accepts ``t = 0`` (returns 1)."""
        return 1.0 if t == 0 else self.alpha_bar(t)

    def beta_sum(self, t: int, t_prev: int) -> float:
        """Total variance ``sum(beta_s)`` for ``t_prev < s <= t``."""
        self._check(t)
        if not 0 <= t_prev < t:
            raise ValueError(f"need 0 <= t_prev < t, got t={t}, t_prev={t_prev}")
        return float(self.betas[t_prev:t].sum())

    def modulation_coeff(self, t: int, strength: float = 1.0) -> float:
        """Noise-prediction modulation ``strength * sqrt(abar) / sqrt(1 - abar)``."""
        if strength < 0:
            raise ValueError("strength must be non-negative")
        ab = self.alpha_bar(t)
        return strength * math.sqrt(ab) / math.sqrt(1.0 - ab)

    def drift_correction_coeff(self, t: int) -> float:
        """Scalar ``c`` such that the reverse-drift shift is ``c * delta``.

        Equal to ``-g^2(t) sqrt(abar) / (1 - abar)`` with ``g^2 = beta_t``.
        """
        ab = self.alpha_bar(t)
        return -self.beta(t) * math.sqrt(ab) / (1.0 - ab)

    def forward_drift(self, z: np.ndarray, t: int) -> np.ndarray:
        return -0.5 * self.beta(t) * np.asarray(z, dtype=float)

    def diffusion(self, t: int) -> float:
        return math.sqrt(self.beta(t))

    def forward_perturb(self, t: int, z0, rng: np.random.Generator) -> np.ndarray:
        """Draw ``z_t = sqrt(abar) z0 + sqrt(1 - abar) eps`` with ``eps`` from ``rng``."""
        z0 = np.asarray(z0, dtype=float)
        ab = self.alpha_bar(t)
        eps = rng.standard_normal(z0.shape)
        return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps

    def gamma_curve(self, strength: float = 1.0) -> np.ndarray:
        """Modulation coefficient for every t = 1..T (index 0 holds t=1)."""
        ab = self.alpha_bars
        return strength * np.sqrt(ab) / np.sqrt(1.0 - ab)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "T": self.T, "beta_min": self.beta_min, "beta_max": self.beta_max}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(d["kind"], int(d["T"]), float(d["beta_min"]), float(d["beta_max"]))

    @classmethod
    def from_json(cls, text: str) -> "NoiseSchedule":
        return cls.from_dict(json.loads(text))


def _cosine_betas(T: int) -> np.ndarray:
    steps = np.arange(T + 1, dtype=float)
    f = np.cos((steps / T + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2
    abar = f / f[0]
    betas = 1.0 - abar[1:] / abar[:-1]
    return np.clip(betas, np.finfo(float).tiny, MAX_BETA)


def build_schedule(
    kind: str = "linear",
    T: int = 50,
    beta_min: float | None = None,
    beta_max: float | None = None,
) -> NoiseSchedule:
    """Build a schedule; missing beta bounds fall back to :func:`default_beta_range`.

    The cosine family ignores the bounds for its betas (they are still
    validated and serialized).
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    lo, hi = default_beta_range(T)
    return NoiseSchedule(
        kind,
        int(T),
        lo if beta_min is None else float(beta_min),
        hi if beta_max is None else float(beta_max),
    )


# functional forms of the schedule queries
def alpha_bar(s: NoiseSchedule, t: int) -> float:
    return s.alpha_bar(t)


def modulation_coeff(s: NoiseSchedule, t: int, strength: float = 1.0) -> float:
    return s.modulation_coeff(t, strength)


def drift_correction_coeff(s: NoiseSchedule, t: int) -> float:
    return s.drift_correction_coeff(t)


def forward_perturb(s: NoiseSchedule, t: int, z0, rng: np.random.Generator) -> np.ndarray:
    return s.forward_perturb(t, z0, rng)
