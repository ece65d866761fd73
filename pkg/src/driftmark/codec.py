"""Message <-> latent residual codes.

Two codecs share the same bit conventions (antipodal symbols ``s = 2m - 1``,
decode ``1`` on a non-negative margin):

* :class:`CodeBook` spreads each bit over one orthonormal carrier. Its bit
  error rate under white Gaussian noise of std ``sigma`` is ``Q(alpha/sigma)``.
* :class:`LinearCoder` is a trainable encoder/decoder pair fitted with a
  BCE message loss plus a weighted MSE between the watermarked image and the
  VAE reconstruction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .toy_vae import LinearVAE


def as_bits(m) -> np.ndarray:
    bits = np.asarray(m)
    if bits.size == 0:
        raise ValueError("message must contain at least one bit")
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("message bits must be 0 or 1")
    return bits.astype(np.uint8)


def symbols(m) -> np.ndarray:
    return 2.0 * as_bits(m) - 1.0


def random_message(k: int, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    shape = (k,) if n is None else (n, k)
    return rng.integers(0, 2, size=shape, dtype=np.uint8)


def message_to_hex(m) -> str:
    bits = as_bits(m).ravel()
    width = math.ceil(len(bits) / 4)
    value = int("".join(map(str, bits)), 2)
    return f"{value:0{width}x}"


def message_from_hex(text: str, k: int | None = None) -> np.ndarray:
    text = text.lower().removeprefix("0x")
    k = 4 * len(text) if k is None else k
    value = int(text, 16)
    if value >= 2**k:
        raise ValueError(f"hex message {text!r} does not fit in {k} bits")
    return np.array([int(c) for c in format(value, f"0{k}b")], dtype=np.uint8)


def bit_accuracy(m, m_prime) -> np.ndarray | float:
    """Fraction of matching bits along the last axis."""
    a, b = as_bits(m), as_bits(m_prime)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"message lengths differ: {a.shape[-1]} vs {b.shape[-1]}")
    acc = np.mean(a == b, axis=-1)
    return float(acc) if np.ndim(acc) == 0 else acc


@dataclass(frozen=True, eq=False)
class CodeBook:
    carriers: np.ndarray  # (k, d), orthonormal rows
    alpha: float

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.carriers, dtype=float))
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if u.shape[0] > u.shape[1]:
            raise ValueError(f"cannot fit {u.shape[0]} orthonormal carriers in {u.shape[1]} dims")
        if not np.allclose(u @ u.T, np.eye(u.shape[0]), atol=1e-10):
            raise ValueError("carriers must be orthonormal")
        u.setflags(write=False)
        object.__setattr__(self, "carriers", u)

    @property
    def k(self) -> int:
        return self.carriers.shape[0]

    @property
    def dim(self) -> int:
        return self.carriers.shape[1]

    def projections(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.dim:
            raise ValueError(f"latent has length {z.shape[-1]}, codebook dim is {self.dim}")
        return z @ self.carriers.T

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "carriers": self.carriers.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "CodeBook":
        return cls(np.array(d["carriers"]), float(d["alpha"]))

    @classmethod
    def from_json(cls, text: str) -> "CodeBook":
        return cls.from_dict(json.loads(text))


# per-carrier amplitude; with d=64, k=32 the residual RMS is ~0.53 per coordinate
DEFAULT_ALPHA = 0.75


def make_codebook(d: int, k: int, alpha: float, seed: int = 0) -> CodeBook:
    """Orthonormalized Gaussian carriers (QR of a seeded ``d x k`` draw)."""
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    g = np.random.default_rng(seed).standard_normal((d, k))
    q, r = np.linalg.qr(g)
    q *= np.sign(np.diag(r))  # unique QR: positive diagonal
    return CodeBook(q.T, alpha)


def encode_message(m, cb: CodeBook) -> np.ndarray:
    s = symbols(m)
    if s.shape[-1] != cb.k:
        raise ValueError(f"message has {s.shape[-1]} bits, codebook carries {cb.k}")
    return cb.alpha * s @ cb.carriers


def decode_message(z, cb: CodeBook) -> np.ndarray:
    """Bit ``i`` is 1 iff the carrier margin ``u_i . z`` is non-negative."""
    return (cb.projections(z) >= 0).astype(np.uint8)


def detection_stat(z, m_expected, cb: CodeBook) -> np.ndarray | float:
    """Mean signed carrier margin in units of ``alpha``: 1 on a clean watermark."""
    s = symbols(m_expected)
    if s.shape[-1] != cb.k:
        raise ValueError(f"message has {s.shape[-1]} bits, codebook carries {cb.k}")
    stat = np.mean(s * cb.projections(z), axis=-1) / cb.alpha
    return float(stat) if np.ndim(stat) == 0 else stat


# ---------------------------------------------------------------------------
# trainable linear codec
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class LinearCoder:
    enc: np.ndarray  # (k, d): residual = symbols @ enc
    dec: np.ndarray  # (d, k): logits = z @ dec + bias
    bias: np.ndarray  # (k,)
    lambda2: float = 30.0
    epochs: int = 0
    losses: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.enc.shape[0]

    @property
    def dim(self) -> int:
        return self.enc.shape[1]

    def encode(self, m) -> np.ndarray:
        s = symbols(m)
        if s.shape[-1] != self.k:
            raise ValueError(f"message has {s.shape[-1]} bits, coder carries {self.k}")
        return s @ self.enc

    def logits(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.dim:
            raise ValueError(f"latent has length {z.shape[-1]}, coder dim is {self.dim}")
        return z @ self.dec + self.bias

    def decode(self, z) -> np.ndarray:
        return (self.logits(z) >= 0).astype(np.uint8)

    def to_dict(self) -> dict:
        return {
            "enc": self.enc.tolist(),
            "dec": self.dec.tolist(),
            "bias": self.bias.tolist(),
            "lambda2": self.lambda2,
            "epochs": self.epochs,
            "losses": list(self.losses),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "LinearCoder":
        return cls(
            np.array(d["enc"], dtype=float),
            np.array(d["dec"], dtype=float),
            np.array(d["bias"], dtype=float),
            float(d["lambda2"]),
            int(d["epochs"]),
            list(d.get("losses", [])),
        )

    @classmethod
    def from_json(cls, text: str) -> "LinearCoder":
        return cls.from_dict(json.loads(text))


def coder_loss(coder: LinearCoder, z, m, vae: LinearVAE, lambda2: float):
    """Training objective and its gradients for one batch.

    ``loss = BCE(m, sigmoid(logits(z + delta))) + lambda2 * MSE(x_r, x_w)``
    where ``x_r = dec(z)`` is the VAE reconstruction of the cover and
    ``x_w = dec(z + delta)``. Both images are decoded noiselessly, so the MSE
    is the decoded residual energy per pixel.

    Returns ``(loss, grad_enc, grad_dec, grad_bias)``.
    """
    s = symbols(m)  # (n, k)
    delta = s @ coder.enc  # (n, d)
    zw = z + delta
    logits = zw @ coder.dec + coder.bias
    bits = (s + 1) / 2
    # mean BCE over bits and batch, written stably
    bce = np.mean(np.logaddexp(0.0, logits) - bits * logits)
    resid = delta @ vae.dec.T  # (n, D)
    mse = np.mean(resid**2)
    loss = bce + lambda2 * mse

    g_logits = (expit(logits) - bits) / logits.size  # dBCE/dlogits
    grad_dec = zw.T @ g_logits
    grad_bias = g_logits.sum(axis=0)
    g_delta = g_logits @ coder.dec.T + lambda2 * 2.0 * (resid @ vae.dec) / resid.size
    grad_enc = s.T @ g_delta
    return float(loss), grad_enc, grad_dec, grad_bias


def train_linear_coder(
    latents,
    vae: LinearVAE,
    k: int,
    lambda2: float = 30.0,
    epochs: int = 2000,
    lr: float = 5e-3,
    seed: int = 0,
    batch_size: int = 64,
    init_scale: float = 0.1,
    ramp_fraction: float = 0.1,
) -> LinearCoder:
    """Fit a :class:`LinearCoder` by plain gradient descent.

    Each of the ``epochs`` steps draws a batch of covers from ``latents`` and
    fresh random messages, then takes one gradient step on both maps. The MSE
    weight rises linearly from 0 to ``lambda2`` over the first
    ``ramp_fraction`` of the steps.
    """
    latents = np.atleast_2d(np.asarray(latents, dtype=float))
    if latents.shape[0] == 0 or latents.size == 0:
        raise ValueError("training set is empty")
    if lr <= 0:
        raise ValueError("lr must be positive")
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    d = latents.shape[1]
    if d != vae.d:
        raise ValueError(f"latents have dim {d}, VAE latent dim is {vae.d}")
    rng = np.random.default_rng(seed)
    coder = LinearCoder(
        enc=init_scale * rng.standard_normal((k, d)),
        dec=init_scale * rng.standard_normal((d, k)),
        bias=np.zeros(k),
        lambda2=lambda2,
        epochs=epochs,
    )
    ramp_steps = ramp_fraction * epochs
    for i in range(epochs):
        weight = lambda2 * min(1.0, (i + 1) / ramp_steps) if ramp_steps > 0 else lambda2
        idx = rng.integers(0, latents.shape[0], size=batch_size)
        m = random_message(k, rng, batch_size)
        loss, g_enc, g_dec, g_bias = coder_loss(coder, latents[idx], m, vae, weight)
        coder.enc -= lr * g_enc
        coder.dec -= lr * g_dec
        coder.bias -= lr * g_bias
        coder.losses.append(loss)
    return coder
