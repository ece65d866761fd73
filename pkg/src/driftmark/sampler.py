"""Reverse-process samplers driven by the exact score oracle.

Every step computes the noise prediction from the oracle, applies the
watermark correction in noise space when an injection config is active, and
only then hands the (possibly corrected) prediction to the sampler-specific
update. The correction therefore never depends on which sampler is used.

Each step draws one standard-normal array from the generator, even for
deterministic samplers, so trajectories that share a seed also share their
noise increments (common random numbers).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .injection import InjectionConfig, corrected_eps
from .schedule import NoiseSchedule
from .score_oracle import ScoreOracle

SAMPLER_NAMES = ("ddim", "ancestral", "em-sde", "pf-ode")


@dataclass(frozen=True)
class SamplerKind:
    name: str
    eta: float = 0.0

    def __post_init__(self):
        if self.name not in SAMPLER_NAMES:
            raise ValueError(f"unknown sampler {self.name!r}; expected one of {SAMPLER_NAMES}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.name != "ddim" and self.eta != 0.0:
            raise ValueError("eta only applies to ddim")

    @property
    def stochastic(self) -> bool:
        return self.name in ("ancestral", "em-sde") or self.eta > 0

    @property
    def label(self) -> str:
        return f"ddim(eta={self.eta:g})" if self.name == "ddim" else self.name

    @classmethod
    def parse(cls, text: str) -> "SamplerKind":
        """Parse ``ddim``, ``ddim:0.5``, ``ancestral``, ``em-sde`` or ``pf-ode``."""
        name, _, eta = text.partition(":")
        return cls(name, float(eta) if eta else 0.0)


DDIM = SamplerKind("ddim")
ANCESTRAL = SamplerKind("ancestral")
EM_SDE = SamplerKind("em-sde")
PF_ODE = SamplerKind("pf-ode")


@dataclass
class LatentState:
    z: np.ndarray
    t: int


@dataclass
class Trajectory:
    states: list[LatentState]
    seed: int | None
    injected: InjectionConfig | None = None
    # norm of the oracle noise prediction at each step, before any correction
    eps_norms: list[np.ndarray] = field(default_factory=list)
    # max |z0_hat(corrected) - z0_hat(raw) - strength*delta| at each step
    constraint_errors: list[float] = field(default_factory=list)

    @property
    def z0(self) -> np.ndarray:
        return self.states[-1].z

    @property
    def timesteps(self) -> list[int]:
        return [st.t for st in self.states]

    def eps_norm_by_t(self) -> dict[int, float]:
        """Batch-averaged noise-prediction norm keyed by the step's timestep."""
        return {st.t: float(np.mean(n)) for st, n in zip(self.states[:-1], self.eps_norms)}

    def to_csv(self, path, include_z: bool = False) -> None:
        """Write one row per step: step, t, eps_norm (batch mean), optionally z."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            d = self.states[0].z.shape[-1]
            header = ["step", "t", "eps_norm"]
            if include_z:
                header += [f"z{i}" for i in range(d)]
            w.writerow(header)
            for i, st in enumerate(self.states):
                norm = float(np.mean(self.eps_norms[i])) if i < len(self.eps_norms) else ""
                row = [i, st.t, norm]
                if include_z:
                    z = st.z if st.z.ndim == 1 else st.z[0]
                    row += [repr(float(v)) for v in z]
                w.writerow(row)


def step_grid(T: int, steps: int) -> list[int]:
    """Evenly spaced descending timesteps from ``T`` to 1 (just ``[T]`` for one step)."""
    if not 1 <= steps <= T:
        raise ValueError(f"need 1 <= steps <= T, got steps={steps}, T={T}")
    if steps == 1:
        return [T]
    grid = np.floor(np.linspace(T, 1, steps) + 0.5).astype(int)
    return [int(t) for t in grid]


def predict(o: ScoreOracle, s: NoiseSchedule, z, t: int, cfg: InjectionConfig | None = None):
    """Return ``(eps, z0_hat, raw_eps, raw_z0_hat)`` at ``(z, t)``.

    ``raw_*`` are the oracle's own predictions; ``eps`` and ``z0_hat`` carry
    the correction when ``cfg`` is active at ``t``.
    """
    ab = s.alpha_bar(t)
    sa, sb = math.sqrt(ab), math.sqrt(1.0 - ab)
    eps_raw = o.eps(s, z, t)
    raw_z0 = (z - sb * eps_raw) / sa
    if cfg is None or not cfg.active(t):
        return eps_raw, raw_z0, eps_raw, raw_z0
    eps = corrected_eps(eps_raw, cfg, s, t)
    return eps, (z - sb * eps) / sa, eps_raw, raw_z0


def _update(kind: SamplerKind, s: NoiseSchedule, z, t: int, t_prev: int, eps, z0_hat, noise):
    ab, ab_prev = s.abar(t), s.abar(t_prev)
    if kind.name == "ddim":
        sigma = kind.eta * math.sqrt((1 - ab_prev) / (1 - ab) * (1 - ab / ab_prev))
        dir_coeff = math.sqrt(max(1 - ab_prev - sigma**2, 0.0))
        return math.sqrt(ab_prev) * z0_hat + dir_coeff * eps + sigma * noise
    if kind.name == "ancestral":
        beta = 1.0 - ab / ab_prev
        mean = (math.sqrt(ab_prev) * beta / (1 - ab)) * z0_hat + (
            math.sqrt(1 - beta) * (1 - ab_prev) / (1 - ab)
        ) * z
        var = (1 - ab_prev) / (1 - ab) * beta
        return mean + math.sqrt(var) * noise
    score = -eps / math.sqrt(1 - ab)
    g2 = s.beta_sum(t, t_prev)
    if kind.name == "em-sde":
        # reverse-time Euler-Maruyama on dz = [f - g^2 score] dt + g dw
        return z + g2 * (0.5 * z + score) + math.sqrt(g2) * noise
    # probability-flow ODE, dz = [f - g^2 score / 2] dt
    return z + 0.5 * g2 * (z + score)


def step(
    kind: SamplerKind,
    o: ScoreOracle,
    s: NoiseSchedule,
    z,
    t: int,
    t_prev: int,
    cfg: InjectionConfig | None = None,
    rng: np.random.Generator | None = None,
    noise=None,
) -> np.ndarray:
    """Advance ``z`` from ``t`` to ``t_prev``.

    The Gaussian increment is taken from ``noise`` if given, else drawn from
    ``rng``. Deterministic kinds ignore it.
    """
    z = np.asarray(z, dtype=float)
    if not 0 <= t_prev < t:
        raise ValueError(f"need 0 <= t_prev < t, got t={t}, t_prev={t_prev}")
    if z.shape[-1] != o.dim:
        raise ValueError(f"latent has length {z.shape[-1]}, oracle dim is {o.dim}")
    if noise is None:
        if rng is None:
            raise ValueError("step needs either rng or noise")
        noise = rng.standard_normal(z.shape)
    eps, z0_hat, _, _ = predict(o, s, z, t, cfg)
    return _update(kind, s, z, t, t_prev, eps, z0_hat, noise)


def run_chain(
    kind: SamplerKind,
    o: ScoreOracle,
    s: NoiseSchedule,
    z,
    grid: list[int],
    rng: np.random.Generator,
    cfg: InjectionConfig | None = None,
    seed: int | None = None,
) -> Trajectory:
    """Integrate from ``z`` at ``grid[0]`` down to t=0 through the descending ``grid``."""
    z = np.asarray(z, dtype=float)
    if cfg is not None:
        cfg.validate_for(s, o.dim)
    traj = Trajectory([LatentState(z, grid[0] if grid else 0)], seed, cfg)
    ts = list(grid) + [0]
    for t, t_prev in zip(ts[:-1], ts[1:]):
        noise = rng.standard_normal(z.shape)
        eps, z0_hat, eps_raw, raw_z0 = predict(o, s, z, t, cfg)
        if cfg is not None and cfg.active(t):
            err = np.max(np.abs(z0_hat - raw_z0 - cfg.strength * cfg.delta))
        else:
            err = 0.0
        traj.constraint_errors.append(float(err))
        traj.eps_norms.append(np.linalg.norm(eps_raw, axis=-1))
        z = _update(kind, s, z, t, t_prev, eps, z0_hat, noise)
        traj.states.append(LatentState(z, t_prev))
    return traj


def sample(
    kind: SamplerKind,
    o: ScoreOracle,
    s: NoiseSchedule,
    steps: int | None = None,
    cfg: InjectionConfig | None = None,
    seed: int = 0,
    n: int | None = None,
) -> Trajectory:
    """Generate from ``z_T ~ N(0, I)``.

    With ``n`` set, ``n`` independent trajectories are integrated as one
    ``(n, d)`` batch sharing the seeded stream.
    """
    steps = s.T if steps is None else steps
    if steps > s.T:
        raise ValueError(f"steps={steps} exceeds schedule length {s.T}")
    grid = step_grid(s.T, steps)
    rng = np.random.default_rng(seed)
    shape = (o.dim,) if n is None else (n, o.dim)
    z_T = rng.standard_normal(shape)
    return run_chain(kind, o, s, z_T, grid, rng, cfg, seed)


def paired_sample(
    kind: SamplerKind,
    o: ScoreOracle,
    s: NoiseSchedule,
    steps: int | None,
    cfg: InjectionConfig,
    seed: int,
    n: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Clean and watermarked final latents driven by identical noise."""
    clean = sample(kind, o, s, steps, None, seed, n)
    marked = sample(kind, o, s, steps, cfg, seed, n)
    return clean.z0, marked.z0


def ddim_invert(
    o: ScoreOracle,
    s: NoiseSchedule,
    z0,
    steps: int,
    exact: bool = True,
    tol: float = 1e-12,
    max_iter: int = 30,
) -> np.ndarray:
    """Run deterministic DDIM backwards (t increasing) to recover ``z_T``.

    Uses the uncorrected oracle. With ``exact=True`` each interval is solved
    implicitly by Newton's method, so that one DDIM(eta=0) step from the
    result lands back on the input. ``exact=False`` is the usual explicit
    approximation that evaluates the noise prediction at the known,
    lower-noise point.
    """
    z = np.array(z0, dtype=float)
    if z.shape[-1] != o.dim:
        raise ValueError(f"latent has length {z.shape[-1]}, oracle dim is {o.dim}")
    if steps == 0:
        return z
    grid = step_grid(s.T, steps)
    ts = [0] + grid[::-1]
    for t_cur, t_next in zip(ts[:-1], ts[1:]):
        a_c, b_c = math.sqrt(s.abar(t_cur)), math.sqrt(1 - s.abar(t_cur))
        a_n, b_n = math.sqrt(s.abar(t_next)), math.sqrt(1 - s.abar(t_next))
        t_eval = t_cur if t_cur > 0 else t_next
        eps = o.eps(s, z, t_eval)
        z_next = a_n * (z - b_c * eps) / a_c + b_n * eps
        if exact:
            z_next = _solve_ddim_preimage(o, s, z, z_next, t_next, a_c, b_c, a_n, b_n, tol, max_iter)
        z = z_next
    return z


def _solve_ddim_preimage(o, s, target, guess, t, a_c, b_c, a_n, b_n, tol, max_iter):
    # DDIM(t -> t_cur) is z -> (a_c/a_n) z + k * eps(z, t); solve it equal to target
    k = b_c - a_c * b_n / a_n
    scale = a_c / a_n
    eye = np.eye(o.dim)
    z = guess
    for _ in range(max_iter):
        resid = scale * z + k * o.eps(s, z, t) - target
        if np.max(np.abs(resid)) <= tol * (1.0 + np.max(np.abs(target))):
            break
        jac = scale * eye - k * b_n * o.score_jacobian(s, z, t)
        z = z - np.linalg.solve(jac, resid[..., None])[..., 0]
    return z
