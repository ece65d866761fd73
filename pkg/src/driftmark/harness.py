"""Detection protocol, fidelity metrics, diagnostics and experiment suites.

Detection follows a per-cell calibration: every (sampler, attack, preset)
cell gets its own threshold, set at the empirical ``1 - fpr`` quantile of the
detection statistic on clean samples passed through the same attack. A
single fixed threshold across attacks breaks down whenever an attack shifts
the clean-score distribution.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .attacks import DISTORTIONS, AttackSpec, attack, average_forgery, rinse
from .codec import (
    DEFAULT_ALPHA,
    CodeBook,
    bit_accuracy,
    decode_message,
    detection_stat,
    encode_message,
    make_codebook,
    message_from_hex,
    random_message,
)
from .injection import InjectionConfig, make_preset
from .sampler import SamplerKind, Trajectory, sample
from .schedule import NoiseSchedule, build_schedule
from .score_oracle import ScoreOracle, default_oracle
from .toy_vae import LinearVAE, make_vae

PSNR_CAP = 99.0
PSNR_MAX = 2.0  # toy dynamic range [-1, 1]
CSV_COLUMNS = [
    "sampler",
    "attack",
    "preset",
    "n",
    "bit_acc_mean",
    "bit_acc_se",
    "tpr",
    "stat_mean",
    "psnr_mean",
]


class CellError(RuntimeError):
    """A suite cell failed; the message names the cell."""


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def calibrate_threshold(clean_stats, fpr_target: float = 0.01) -> float:
    """Empirical ``1 - fpr_target`` quantile of clean detection scores.

    Scores strictly above the threshold count as detections. Needs at least
    ``max(100, 1/fpr_target)`` clean scores.
    """
    if not 0 < fpr_target < 1:
        raise ValueError("fpr_target must lie in (0, 1)")
    stats = np.asarray(clean_stats, dtype=float).ravel()
    need = max(100, math.ceil(1.0 / fpr_target))
    if stats.size < need:
        raise ValueError(f"calibration needs at least {need} clean scores, got {stats.size}")
    return float(np.quantile(stats, 1.0 - fpr_target, method="higher"))


def tpr_at_fpr(wm_stats, threshold: float) -> float:
    stats = np.asarray(wm_stats, dtype=float).ravel()
    if stats.size == 0:
        raise ValueError("no watermarked scores given")
    return float(np.mean(stats > threshold))


def psnr(x, y, max_val: float = PSNR_MAX, cap: float = PSNR_CAP):
    """Peak signal-to-noise ratio along the last axis; identical inputs give ``cap``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = np.mean((x - y) ** 2, axis=-1)
    with np.errstate(divide="ignore"):
        val = np.where(mse > 0, 10.0 * np.log10(max_val**2 / np.where(mse > 0, mse, 1.0)), cap)
    val = np.minimum(val, cap)
    return float(val) if val.ndim == 0 else val


def null_percentile(stat, clean_stats) -> np.ndarray:
    """Fraction of clean scores below ``stat``, a calibrated confidence."""
    clean = np.sort(np.asarray(clean_stats, dtype=float).ravel())
    return np.searchsorted(clean, np.asarray(stat, dtype=float), side="left") / clean.size


def diagnostics(s: NoiseSchedule, traj_q: Trajectory, traj_r: Trajectory) -> list[dict]:
    """Per-step modulation coefficient and noise-prediction norms for two runs."""
    if traj_q.timesteps != traj_r.timesteps:
        raise ValueError("trajectories were run on different step grids")
    if max(traj_q.timesteps) > s.T:
        raise ValueError("trajectories do not belong to this schedule")
    rows = []
    for i, t in enumerate(traj_q.timesteps[:-1]):
        rows.append(
            {
                "t": t,
                "gamma": s.modulation_coeff(t, 1.0),
                "eps_norm_Q": float(np.mean(traj_q.eps_norms[i])),
                "eps_norm_R": float(np.mean(traj_r.eps_norms[i])),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------


def default_attacks() -> list[AttackSpec]:
    return [AttackSpec("noise", 0.25), rinse(2)]


@dataclass
class ExperimentConfig:
    T: int = 50
    schedule_kind: str = "linear"
    beta_min: float | None = None
    beta_max: float | None = None
    steps: int | None = None
    dim: int = 64
    n_components: int = 3
    mean_norm: float = 4.0
    oracle_seed: int = 0
    samplers: list[str] = field(default_factory=lambda: ["ddim", "ancestral", "em-sde", "pf-ode"])
    presets: list[str] = field(default_factory=lambda: ["Q", "R"])
    k: int = 32
    alpha: float = DEFAULT_ALPHA
    codebook_seed: int = 0
    message: str | None = None  # hex; drawn from message_seed when absent
    message_seed: int = 1
    vae_D: int | None = None  # defaults to 4 * dim
    sigma_r: float = 0.05
    vae_seed: int = 0
    attacks: list[AttackSpec] = field(default_factory=default_attacks)
    n_seeds: int = 200
    fpr_target: float = 0.01
    master_seed: int = 0
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        self.attacks = [a if isinstance(a, AttackSpec) else AttackSpec.from_dict(a) for a in self.attacks]
        if self.n_seeds < 2:
            raise ValueError("n_seeds must be >= 2")
        if not 0 < self.fpr_target < 1:
            raise ValueError("fpr_target must lie in (0, 1)")
        for name in self.samplers:
            SamplerKind.parse(name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attacks"] = [a.to_dict() for a in self.attacks]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


@dataclass(eq=False)
class Setup:
    """Everything a run needs, built deterministically from a config."""

    schedule: NoiseSchedule
    oracle: ScoreOracle
    codebook: CodeBook
    vae: LinearVAE
    message: np.ndarray
    delta: np.ndarray
    steps: int

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "Setup":
        s = build_schedule(cfg.schedule_kind, cfg.T, cfg.beta_min, cfg.beta_max)
        o = default_oracle(cfg.dim, cfg.n_components, cfg.mean_norm, cfg.oracle_seed)
        cb = make_codebook(cfg.dim, cfg.k, cfg.alpha, cfg.codebook_seed)
        vae = make_vae(cfg.vae_D or 4 * cfg.dim, cfg.dim, cfg.sigma_r, cfg.vae_seed)
        if cfg.message is not None:
            m = message_from_hex(cfg.message, cfg.k)
        else:
            m = random_message(cfg.k, np.random.default_rng(cfg.message_seed))
        return cls(s, o, cb, vae, m, encode_message(m, cb), cfg.steps or s.T)

    def injection(self, preset: str) -> InjectionConfig:
        return make_preset(preset, self.schedule, self.delta)

    def generate(self, sampler: SamplerKind, cfg: InjectionConfig | None, seed: int, n: int, decode_seed: int):
        """Sample ``n`` latents and decode them to toy images."""
        z0 = sample(sampler, self.oracle, self.schedule, self.steps, cfg, seed, n).z0
        x = self.vae.decode(z0, np.random.default_rng(decode_seed))
        return z0, x

    def read(self, x):
        """Extraction: encode an image and decode bits plus the detection score."""
        z = self.vae.encode(x)
        return decode_message(z, self.codebook), detection_stat(z, self.message, self.codebook)


@dataclass
class MetricsRecord:
    sampler: str
    attack: str
    preset: str
    n: int
    bit_acc_mean: float
    bit_acc_se: float
    tpr: float
    stat_mean: float
    psnr_mean: float
    threshold: float = float("nan")
    fpr_heldout: float = float("nan")
    cell_seed: int = 0

    def csv_row(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in CSV_COLUMNS]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


def write_csv(records: list[MetricsRecord], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.csv_row())
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def write_json(records: list[MetricsRecord], path=None) -> str:
    text = json.dumps([asdict(r) for r in records], indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------

NO_ATTACK = "none"


def suite_cells(cfg: ExperimentConfig) -> list[tuple[str, AttackSpec | None, str]]:
    attacks: list[AttackSpec | None] = [None] + list(cfg.attacks)
    return [(smp, atk, pre) for smp in cfg.samplers for atk in attacks for pre in cfg.presets]


def _cell_seeds(master_seed: int, index: int) -> list[int]:
    ss = np.random.SeedSequence([master_seed, index])
    return [int(x) for x in ss.generate_state(6, dtype=np.uint32)]


def _attack_batch(x, atk: AttackSpec | None, seed: int, setup: Setup):
    if atk is None:
        return x
    return attack(x, atk, np.random.default_rng(seed), setup.oracle, setup.schedule, setup.vae)


def run_cell(cfg: ExperimentConfig, index: int, cell, setup: Setup | None = None) -> MetricsRecord:
    sampler_name, atk, preset = cell
    try:
        setup = setup or Setup.from_config(cfg)
        if atk is not None and atk.kind not in DISTORTIONS + ("regen",):
            raise ValueError(f"attack {atk.kind!r} cannot run inside a suite cell")
        sampler = SamplerKind.parse(sampler_name)
        inj = setup.injection(preset)
        n = cfg.n_seeds
        s_pair, s_cal, s_dec, s_atk_w, s_atk_c, s_atk_cal = _cell_seeds(cfg.master_seed, index)

        z_clean, x_clean = setup.generate(sampler, None, s_pair, n, s_dec)
        z_wm, x_wm = setup.generate(sampler, inj, s_pair, n, s_dec)
        _, x_cal = setup.generate(sampler, None, s_cal, n, s_dec + 1)

        fidelity = psnr(x_wm, x_clean)
        bits_w, stat_w = setup.read(_attack_batch(x_wm, atk, s_atk_w, setup))
        _, stat_c = setup.read(_attack_batch(x_clean, atk, s_atk_c, setup))
        _, stat_cal = setup.read(_attack_batch(x_cal, atk, s_atk_cal, setup))

        thr = calibrate_threshold(stat_cal, cfg.fpr_target)
        acc = bit_accuracy(np.broadcast_to(setup.message, bits_w.shape), bits_w)
        return MetricsRecord(
            sampler=sampler.label,
            attack=NO_ATTACK if atk is None else atk.label,
            preset=preset,
            n=n,
            bit_acc_mean=float(np.mean(acc)),
            bit_acc_se=float(np.std(acc, ddof=1) / math.sqrt(n)),
            tpr=tpr_at_fpr(stat_w, thr),
            stat_mean=float(np.mean(stat_w)),
            psnr_mean=float(np.mean(fidelity)),
            threshold=thr,
            fpr_heldout=float(np.mean(stat_c > thr)),
            cell_seed=s_pair,
        )
    except Exception as exc:
        label = NO_ATTACK if atk is None else atk.label
        raise CellError(f"cell {index} (sampler={sampler_name}, attack={label}, preset={preset}): {exc}") from exc


def _run_cell_star(args):
    return run_cell(*args)


def run_suite(cfg: ExperimentConfig) -> list[MetricsRecord]:
    """Evaluate every (sampler, attack, preset) cell.

    Each cell seeds its own streams from ``(master_seed, cell index)``, so the
    result does not depend on ``cfg.workers``. Writes CSV to ``cfg.out`` if set.
    """
    cells = suite_cells(cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(_run_cell_star, [(cfg, i, c) for i, c in enumerate(cells)]))
    else:
        setup = Setup.from_config(cfg)
        records = [run_cell(cfg, i, c, setup) for i, c in enumerate(cells)]
    if cfg.out:
        write_csv(records, cfg.out)
    return records


# ---------------------------------------------------------------------------
# window x strength ablation
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ["t_start", "t_end", "lambda", "psnr", "det", "acc"]


def default_sweep_grid(T: int) -> list[tuple[tuple[int, int], float]]:
    windows = [(1, T), (T // 2, T), (max(1, round(0.4 * T)), round(0.9 * T))]
    return [(w, lam) for w in windows for lam in (0.5, 1.0)]


def sweep_ablation(grid, cfg: ExperimentConfig, sampler: str | None = None) -> list[dict]:
    """PSNR against the paired clean image and detection / bit accuracy per grid cell.

    ``grid`` is a list of ``((t_start, t_end), strength)`` pairs. All cells
    share one seed, so differences come from the window and strength alone.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("sweep grid is empty")
    setup = Setup.from_config(cfg)
    smp = SamplerKind.parse(sampler or cfg.samplers[0])
    n = cfg.n_seeds
    s_pair, s_cal, s_dec, *_ = _cell_seeds(cfg.master_seed, 10_000)

    _, x_clean = setup.generate(smp, None, s_pair, n, s_dec)
    _, x_cal = setup.generate(smp, None, s_cal, n, s_dec + 1)
    thr = calibrate_threshold(setup.read(x_cal)[1], cfg.fpr_target)

    rows = []
    for window, lam in grid:
        try:
            t_start, t_end = (int(w) for w in window)
            inj = InjectionConfig(setup.delta, float(lam), t_start, t_end)
            inj.validate_for(setup.schedule)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"malformed sweep cell {window!r}, lambda={lam!r}: {exc}") from exc
        _, x_wm = setup.generate(smp, inj, s_pair, n, s_dec)
        bits, stat = setup.read(x_wm)
        rows.append(
            {
                "t_start": t_start,
                "t_end": t_end,
                "lambda": float(lam),
                "psnr": float(np.mean(psnr(x_wm, x_clean))),
                "det": tpr_at_fpr(stat, thr),
                "acc": float(np.mean(bit_accuracy(np.broadcast_to(setup.message, bits.shape), bits))),
            }
        )
    return rows


def forgery_trend(
    cfg: ExperimentConfig,
    ns=(10, 50, 100, 1000),
    repeats: int = 20,
    preset: str = "R",
    sampler: str | None = None,
) -> dict[int, float]:
    """Mean cosine between the averaged residual estimate and the true residual, per pair count.

    Each repeat draws ``max(ns)`` watermarked and ``max(ns)`` clean images from
    independent seeds and averages the first ``n`` residuals, so estimates are
    nested within a repeat.
    """
    ns = sorted(int(n) for n in ns)
    if not ns or ns[0] < 1:
        raise ValueError("pair counts must be positive")
    setup = Setup.from_config(cfg)
    smp = SamplerKind.parse(sampler or cfg.samplers[0])
    inj = setup.injection(preset)
    unit = setup.delta / np.linalg.norm(setup.delta)
    cos = {n: [] for n in ns}
    for r in range(repeats):
        s_wm, s_cl, s_dw, s_dc, *_ = _cell_seeds(cfg.master_seed, 20_000 + r)
        _, x_wm = setup.generate(smp, inj, s_wm, ns[-1], s_dw)
        _, x_cl = setup.generate(smp, None, s_cl, ns[-1], s_dc)
        pairs = np.stack([x_wm, x_cl])
        for n in ns:
            est = average_forgery(pairs, setup.vae, n)
            cos[n].append(float(est @ unit / np.linalg.norm(est)))
    return {n: float(np.mean(c)) for n, c in cos.items()}


def write_rows_csv(rows: list[dict], path=None, columns=None) -> str:
    columns = columns or list(rows[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
