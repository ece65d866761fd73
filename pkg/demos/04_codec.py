"""Spread-spectrum codebook: measured bit error rate against Q(alpha/sigma),
and a trainable linear coder fitted with a light image penalty."""

import numpy as np
from scipy.stats import norm

from driftmark import bit_accuracy, decode_message, encode_message, make_codebook, make_vae, random_message
from driftmark.codec import train_linear_coder

cb = make_codebook(64, 32, 0.75, seed=0)
rng = np.random.default_rng(0)
for ratio in (0.5, 1.0, 2.0):
    m = random_message(32, rng, 5000)
    z = encode_message(m, cb) + ratio * cb.alpha * rng.standard_normal((5000, 64))
    ber = 1 - np.mean(bit_accuracy(m, decode_message(z, cb)))
    print(f"sigma = {ratio:.1f} alpha: measured BER {ber:.4f}, predicted {norm.sf(1 / ratio):.4f}")

vae = make_vae(256, 64, 0.0, seed=0)
covers = rng.standard_normal((2000, 64))
coder = train_linear_coder(covers, vae, 32, lambda2=0.1, epochs=2000, lr=0.05, init_scale=1.0)
m = random_message(32, rng, 500)
z = rng.standard_normal((500, 64)) + coder.encode(m)
print(f"\ntrained coder (lambda2=0.1): loss {coder.losses[0]:.3f} -> {coder.losses[-1]:.3f}, "
      f"accuracy {np.mean(bit_accuracy(m, coder.decode(z))):.4f}")
