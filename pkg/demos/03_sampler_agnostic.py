"""One watermark, four samplers: the injection never looks at which sampler runs."""

import numpy as np

from driftmark import ExperimentConfig, SamplerKind, Setup

setup = Setup.from_config(ExperimentConfig())
for name in ("ddim", "ddim:1.0", "ancestral", "em-sde", "pf-ode"):
    kind = SamplerKind.parse(name)
    for preset in ("Q", "R"):
        _, x = setup.generate(kind, setup.injection(preset), seed=3, n=200, decode_seed=4)
        bits, stat = setup.read(x)
        acc = np.mean(bits == setup.message)
        print(f"{kind.label:14s} preset {preset}: bit accuracy {acc:.4f}  mean stat {stat.mean():.3f}")
