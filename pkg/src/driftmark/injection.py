"""Watermark injection through the noise prediction.

Inside the injection window the predicted noise is shifted by
``-strength * sqrt(abar_t) / sqrt(1 - abar_t) * delta``, which moves the
implied clean-latent estimate by exactly ``strength * delta`` at that step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule

PRESETS = {
    # (t_start, t_end, strength) on a 50-step schedule
    "Q": (20, 45, 0.85),
    "R": (0, 50, 1.0),
}
PRESET_T = 50


@dataclass(frozen=True, eq=False)
class InjectionConfig:
    delta: np.ndarray
    strength: float
    t_start: int
    t_end: int
    preset: str = "custom"

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=float).ravel()
        if delta.size == 0:
            raise ValueError("delta must be non-empty")
        if self.strength < 0:
            raise ValueError("strength must be non-negative")
        if not 1 <= self.t_start <= self.t_end:
            raise ValueError(f"bad window [{self.t_start}, {self.t_end}]")
        if self.preset not in ("Q", "R", "custom"):
            raise ValueError(f"unknown preset {self.preset!r}")
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)

    @property
    def window(self) -> tuple[int, int]:
        return self.t_start, self.t_end

    def active(self, t: int) -> bool:
        return self.t_start <= t <= self.t_end

    def validate_for(self, s: NoiseSchedule, dim: int | None = None) -> None:
        if self.t_end > s.T:
            raise ValueError(f"window end {self.t_end} exceeds schedule length {s.T}")
        if dim is not None and self.delta.size != dim:
            raise ValueError(f"delta has length {self.delta.size}, latent dim is {dim}")

    def with_strength(self, strength: float) -> "InjectionConfig":
        return InjectionConfig(self.delta, strength, self.t_start, self.t_end, "custom")

    def to_dict(self) -> dict:
        return {
            "delta": self.delta.tolist(),
            "lambda": self.strength,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "preset": self.preset,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "InjectionConfig":
        return cls(d["delta"], float(d["lambda"]), int(d["t_start"]), int(d["t_end"]), d.get("preset", "custom"))

    @classmethod
    def from_json(cls, text: str) -> "InjectionConfig":
        return cls.from_dict(json.loads(text))


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def scale_window(t_start: float, t_end: float, T: int, ref_T: int = PRESET_T) -> tuple[int, int]:
    """Rescale a window given on a ``ref_T``-step grid to ``T`` steps, clamped to [1, T]."""
    lo = min(max(_round_half_up(t_start * T / ref_T), 1), T)
    hi = min(max(_round_half_up(t_end * T / ref_T), 1), T)
    return lo, hi


def mirror_window(t_start: int, t_end: int, T: int) -> tuple[int, int]:
    """The same window counted from the clean end instead of the noise end."""
    return T + 1 - t_end, T + 1 - t_start


def make_preset(kind: str, s: NoiseSchedule, delta) -> InjectionConfig:
    """Quality (Q) or robustness (R) preset, rescaled to the schedule length."""
    if kind not in PRESETS:
        raise ValueError(f"unknown preset {kind!r}; expected one of {sorted(PRESETS)}")
    lo, hi, strength = PRESETS[kind]
    t_start, t_end = scale_window(lo, hi, s.T)
    return InjectionConfig(delta, strength, t_start, t_end, kind)


def corrected_eps(eps, cfg: InjectionConfig, s: NoiseSchedule, t: int) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != cfg.delta.size:
        raise ValueError(f"eps has length {eps.shape[-1]}, delta has length {cfg.delta.size}")
    if not cfg.active(t):
        return eps
    return eps - s.modulation_coeff(t, cfg.strength) * cfg.delta
