"""Robustness: distortions, regeneration and repeated rinsing on both presets."""

import numpy as np

from driftmark import ExperimentConfig, SamplerKind, Setup
from driftmark.attacks import AttackSpec, apply_distortion, regenerate, rinse

setup = Setup.from_config(ExperimentConfig())
kind = SamplerKind.parse("ddim")
images = {p: setup.generate(kind, setup.injection(p), 8, 200, 9)[1] for p in "QR"}


def acc(x):
    return np.mean(setup.read(x)[0] == setup.message)


specs = [AttackSpec(k) for k in ("noise", "quantize", "lowpass", "crop", "vae")]
print(f"{'attack':16s}  Q       R")
for spec in specs:
    row = [acc(apply_distortion(images[p], spec, np.random.default_rng(1))) for p in "QR"]
    print(f"{spec.label:16s}  {row[0]:.3f}   {row[1]:.3f}")
for n in (1, 2, 4):
    spec = rinse(n)
    row = [acc(regenerate(images[p], setup.oracle, setup.schedule, setup.vae, spec, 11)) for p in "QR"]
    print(f"{spec.label:16s}  {row[0]:.3f}   {row[1]:.3f}")
