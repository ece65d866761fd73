"""Distortion, regeneration and forgery attacks on toy images.

Toy images are vectors in R^D. Photometric and degradation attacks act on them
directly; "geometric" attacks use a fixed orthonormal DCT basis as the
frequency domain.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.fft import dct, idct

from .codec import CodeBook, symbols
from .sampler import SamplerKind, run_chain, step_grid
from .schedule import NoiseSchedule
from .score_oracle import ScoreOracle
from .toy_vae import LinearVAE, make_vae

DISTORTIONS = ("noise", "brightness", "contrast", "quantize", "lowpass", "crop", "vae")
GENERATIVE = ("regen",)
FORGERIES = ("average", "imprint")
ATTACK_KINDS = DISTORTIONS + GENERATIVE + FORGERIES

# kind -> (default parameter, parameter meaning)
DEFAULT_PARAMS = {
    "noise": 0.25,  # std of additive noise
    "brightness": 6.0,  # multiplicative factor
    "contrast": 12.0,  # scale about the mean
    "quantize": 16,  # number of levels in [-1, 1]
    "lowpass": 0.5,  # fraction of DCT coefficients kept
    "crop": 0.4,  # fraction of coordinates kept
    "vae": 0.5,  # attacker VAE latent size as a fraction of D
    "regen": 0.2,  # regeneration strength (re-noising depth / T)
    "average": 100,  # number of image pairs
    "imprint": 1.0,  # margin target in units of alpha
}


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    param: float | None = None
    sampler: str = "ddim"
    rinse_n: int = 1
    seed: int = 1234  # attacker-side model seed (vae re-encoding)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack {self.kind!r}; expected one of {ATTACK_KINDS}")
        if self.param is None:
            object.__setattr__(self, "param", DEFAULT_PARAMS[self.kind])
        p = self.param
        bad = {
            "noise": p < 0,
            "brightness": p <= 0,
            "contrast": p < 0,
            "quantize": p < 2 or p != int(p),
            "lowpass": not 0 < p <= 1,
            "crop": not 0 < p <= 1,
            "vae": not 0 < p <= 1,
            "regen": not 0 < p < 1,
            "average": p < 1 or p != int(p),
            "imprint": p <= 0,
        }[self.kind]
        if bad:
            raise ValueError(f"parameter {p} out of range for attack {self.kind!r}")
        if self.rinse_n < 1:
            raise ValueError("rinse_n must be >= 1")
        SamplerKind.parse(self.sampler)

    @property
    def generative(self) -> bool:
        return self.kind in GENERATIVE

    @property
    def label(self) -> str:
        if self.kind == "regen":
            return f"rinse-{self.rinse_n}x({self.param:g})" if self.rinse_n > 1 else f"regen({self.param:g})"
        return f"{self.kind}({self.param:g})"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "AttackSpec":
        return cls.from_dict(json.loads(text))


def rinse(n: int, strength: float = 0.2, sampler: str = "ddim") -> AttackSpec:
    return AttackSpec("regen", strength, sampler, n)


def apply_distortion(x, spec: AttackSpec, rng: np.random.Generator) -> np.ndarray:
    """Apply a non-generative, non-forgery attack to one image or a batch."""
    x = np.asarray(x, dtype=float)
    p = spec.param
    if spec.kind == "noise":
        return x + p * rng.standard_normal(x.shape)
    if spec.kind == "brightness":
        return x * p
    if spec.kind == "contrast":
        mu = x.mean(axis=-1, keepdims=True)
        return mu + p * (x - mu)
    if spec.kind == "quantize":
        step = 2.0 / (int(p) - 1)
        return np.round((np.clip(x, -1.0, 1.0) + 1.0) / step) * step - 1.0
    if spec.kind == "lowpass":
        coef = dct(x, norm="ortho", axis=-1)
        keep = int(round(p * x.shape[-1]))
        coef[..., keep:] = 0.0
        return idct(coef, norm="ortho", axis=-1)
    if spec.kind == "crop":
        keep = int(round(p * x.shape[-1]))
        out = x.copy()
        out[..., keep:] = 0.0
        return out
    if spec.kind == "vae":
        D = x.shape[-1]
        attacker = make_vae(D, max(1, int(round(p * D))), 0.0, spec.seed)
        return attacker.decode(attacker.encode(x))
    raise ValueError(f"{spec.kind!r} is not a plain distortion")


def regenerate(
    x,
    o: ScoreOracle,
    s: NoiseSchedule,
    v: LinearVAE,
    spec: AttackSpec,
    seed: int,
) -> np.ndarray:
    """Encode, re-noise to ``t* = round(strength * T)``, denoise without watermark, decode.

    Repeated ``spec.rinse_n`` times with fresh noise each round.
    """
    if spec.kind != "regen":
        raise ValueError("regenerate needs an AttackSpec of kind 'regen'")
    if not 0 < spec.param < 1:
        raise ValueError("strength must lie in (0, 1)")
    kind = SamplerKind.parse(spec.sampler)
    rng = np.random.default_rng(seed)
    t_star = int(math.floor(spec.param * s.T + 0.5))
    x = np.asarray(x, dtype=float)
    for _ in range(spec.rinse_n):
        z = v.encode(x)
        if t_star > 0:
            z = s.forward_perturb(t_star, z, rng)
            z = run_chain(kind, o, s, z, step_grid(t_star, t_star), rng).z0
        x = v.decode(z, rng)
    return x


def attack(x, spec: AttackSpec, rng: np.random.Generator, o=None, s=None, v=None) -> np.ndarray:
    """Dispatch a distortion or regeneration attack; forgeries have their own entry points."""
    if spec.kind in DISTORTIONS:
        return apply_distortion(x, spec, rng)
    if spec.kind == "regen":
        if o is None or s is None or v is None:
            raise ValueError("regeneration needs the oracle, schedule and VAE")
        return regenerate(x, o, s, v, spec, int(rng.integers(2**63 - 1)))
    raise ValueError(f"forgery attack {spec.kind!r} cannot be applied to a single image")


# ---------------------------------------------------------------------------
# forgeries
# ---------------------------------------------------------------------------


def average_forgery(pairs, v: LinearVAE, n: int | None = None) -> np.ndarray:
    """Estimate the latent watermark residual from (watermarked, clean) image pairs.

    ``pairs`` is a sequence of ``(x_wm, x_clean)`` tuples or a ``(2, N, D)``
    array; the first ``n`` pairs are averaged.
    """
    if isinstance(pairs, np.ndarray):
        x_wm, x_clean = pairs[0], pairs[1]
    else:
        if len(pairs) == 0:
            raise ValueError("no image pairs given")
        x_wm = np.array([p[0] for p in pairs])
        x_clean = np.array([p[1] for p in pairs])
    if len(x_wm) == 0:
        raise ValueError("no image pairs given")
    n = len(x_wm) if n is None else n
    if not 1 <= n <= len(x_wm):
        raise ValueError(f"n={n} outside [1, {len(x_wm)}]")
    return np.mean(v.encode(x_wm[:n]) - v.encode(x_clean[:n]), axis=0)


def imprint_residual(x, delta, v: LinearVAE) -> np.ndarray:
    """Add a latent-space residual to an image through the decoder."""
    return np.asarray(x, dtype=float) + np.asarray(delta, dtype=float) @ v.dec.T


@dataclass
class ForgeryResult:
    x: np.ndarray
    delta_z: np.ndarray
    delta_norm: float | np.ndarray
    psnr: float | np.ndarray


def min_norm_imprint(z, cb: CodeBook, m_target, budget: float) -> np.ndarray:
    """Least-norm ``dz`` with ``s_i u_i.(z + dz) >= budget * alpha`` for every carrier.

    With orthonormal carriers the constraints decouple, so each violated margin
    is lifted independently along its own carrier.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    s = symbols(m_target)
    margins = s * cb.projections(z)
    lift = np.maximum(0.0, budget * cb.alpha - margins)
    return (lift * s) @ cb.carriers


def imprint_forgery(x_clean, v: LinearVAE, cb: CodeBook, m_target, budget: float) -> ForgeryResult:
    from .harness import psnr

    x_clean = np.asarray(x_clean, dtype=float)
    dz = min_norm_imprint(v.encode(x_clean), cb, m_target, budget)
    x_forged = imprint_residual(x_clean, dz, v)
    norm = np.linalg.norm(dz, axis=-1)
    return ForgeryResult(x_forged, dz, float(norm) if norm.ndim == 0 else norm, psnr(x_forged, x_clean))
