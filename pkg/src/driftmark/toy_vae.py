"""A linear stand-in for the latent <-> pixel autoencoder.

The decoder is a random ``D x d`` frame with orthonormal columns and the
encoder is its transpose, so ``encode(decode(z)) == z``. Decoding optionally
adds seeded Gaussian noise of std ``sigma_r``, which models the irreducible
reconstruction gap; encoding stays deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class LinearVAE:
    D: int
    d: int
    sigma_r: float = 0.05
    seed: int = 0
    perturb_scale: float = 0.0
    perturb_seed: int | None = None
    frame: np.ndarray = field(init=False, repr=False)
    dec: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.D >= self.d >= 1:
            raise ValueError(f"need D >= d >= 1, got D={self.D}, d={self.d}")
        if self.sigma_r < 0:
            raise ValueError("sigma_r must be non-negative")
        if self.perturb_scale < 0:
            raise ValueError("perturb_scale must be non-negative")
        g = np.random.default_rng(self.seed).standard_normal((self.D, self.d))
        q, r = np.linalg.qr(g)
        frame = q * np.sign(np.diag(r))
        dec = frame
        if self.perturb_scale > 0:
            noise = np.random.default_rng(self.perturb_seed).standard_normal((self.D, self.d))
            # a D x d Gaussian matrix has spectral norm close to sqrt(D) + sqrt(d)
            dec = frame + self.perturb_scale * noise / (np.sqrt(self.D) + np.sqrt(self.d))
        frame.setflags(write=False)
        dec.setflags(write=False)
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "dec", dec)

    @property
    def enc(self) -> np.ndarray:
        return self.frame.T

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.D:
            raise ValueError(f"image has length {x.shape[-1]}, VAE expects {self.D}")
        return x @ self.frame

    def decode(self, z, rng: np.random.Generator | None = None) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.d:
            raise ValueError(f"latent has length {z.shape[-1]}, VAE expects {self.d}")
        x = z @ self.dec.T
        if self.sigma_r > 0:
            if rng is None:
                raise ValueError("decoding with sigma_r > 0 needs an rng")
            x = x + self.sigma_r * rng.standard_normal(x.shape)
        return x

    def to_dict(self) -> dict:
        d = {"D": self.D, "d": self.d, "sigma_r": self.sigma_r, "seed": self.seed}
        if self.perturb_scale > 0:
            d.update(perturb_scale=self.perturb_scale, perturb_seed=self.perturb_seed)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "LinearVAE":
        return cls(
            int(d["D"]),
            int(d["d"]),
            float(d["sigma_r"]),
            int(d["seed"]),
            float(d.get("perturb_scale", 0.0)),
            d.get("perturb_seed"),
        )

    @classmethod
    def from_json(cls, text: str) -> "LinearVAE":
        return cls.from_dict(json.loads(text))


def make_vae(D: int, d: int, sigma_r: float = 0.05, seed: int = 0) -> LinearVAE:
    return LinearVAE(D, d, sigma_r, seed)


def vae_encode(v: LinearVAE, x) -> np.ndarray:
    return v.encode(x)


def vae_decode(v: LinearVAE, z, rng: np.random.Generator | None = None) -> np.ndarray:
    return v.decode(z, rng)


def perturb_decoder(v: LinearVAE, eps_scale: float, seed: int) -> LinearVAE:
    """Copy of ``v`` whose decoder is nudged by a seeded Gaussian matrix.

    The perturbation has spectral norm of roughly ``eps_scale`` relative to the
    original (unit-norm) decoder. The encoder is untouched.
    """
    if eps_scale < 0:
        raise ValueError("eps_scale must be non-negative")
    if eps_scale == 0:
        return v
    return LinearVAE(v.D, v.d, v.sigma_r, v.seed, eps_scale, seed)
