"""Analytic noise-prediction watermarking for diffusion samplers, at desk scale.

A watermark residual ``delta`` is steered into the final latent by shifting the
noise prediction inside an injection window. The score of a Gaussian mixture is
available in closed form here, so every identity behind the method can be checked
exactly.
"""

from .attacks import AttackSpec, apply_distortion, average_forgery, imprint_forgery, regenerate
from .codec import (
    CodeBook,
    LinearCoder,
    bit_accuracy,
    decode_message,
    detection_stat,
    encode_message,
    make_codebook,
    random_message,
    train_linear_coder,
)
from .harness import (
    ExperimentConfig,
    MetricsRecord,
    Setup,
    calibrate_threshold,
    diagnostics,
    psnr,
    run_suite,
    sweep_ablation,
    tpr_at_fpr,
)
from .injection import InjectionConfig, corrected_eps, make_preset
from .sampler import ANCESTRAL, DDIM, EM_SDE, PF_ODE, SamplerKind, Trajectory, ddim_invert, paired_sample, sample, step
from .schedule import NoiseSchedule, build_schedule
from .score_oracle import ScoreOracle, default_oracle, reparameterize, standard_normal_oracle
from .toy_vae import LinearVAE, make_vae, perturb_decoder

__version__ = "0.1.0"
