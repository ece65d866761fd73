"""Command line entry point: ``driftmark <command> [options]``.

Timesteps follow the sampling loop: ``t = T`` is the first (noisiest) step and
``t = 1`` the last. ``--window a:b`` injects for ``a <= t <= b``. With
``--steps`` below ``T`` the sampler visits an evenly spaced sub-grid that
always contains ``T`` and 1. Default beta range: 1e-4 to 0.02 rescaled by
1000/T (upper end capped at 0.999).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .attacks import AttackSpec, apply_distortion, regenerate
from .codec import bit_accuracy, message_to_hex
from .harness import (
    SWEEP_COLUMNS,
    ExperimentConfig,
    Setup,
    calibrate_threshold,
    default_sweep_grid,
    diagnostics,
    run_suite,
    sweep_ablation,
    write_json,
    write_rows_csv,
)
from .injection import InjectionConfig
from .sampler import SamplerKind, sample


def _window(text: str) -> tuple[int, int]:
    a, sep, b = text.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"window must look like a:b, got {text!r}")
    return int(a), int(b)


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(Path(args.config).read_text()) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.steps is not None:
        cfg.steps = args.steps
    if args.sampler:
        cfg.samplers = list(args.sampler)
    if args.preset:
        cfg.presets = [args.preset]
    if getattr(args, "n", None) is not None:
        cfg.n_seeds = args.n
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    return cfg


def _injection(setup: Setup, args) -> InjectionConfig:
    preset = args.preset or "R"
    inj = setup.injection(preset)
    if args.window is None and args.strength is None:
        return inj
    t_start, t_end = args.window or inj.window
    strength = inj.strength if args.strength is None else args.strength
    cfg = InjectionConfig(setup.delta, strength, t_start, t_end)
    cfg.validate_for(setup.schedule)
    return cfg


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def cmd_embed(args) -> int:
    cfg = _load_config(args)
    setup = Setup.from_config(cfg)
    inj = _injection(setup, args)
    kind = SamplerKind.parse(cfg.samplers[0])
    seed = cfg.master_seed
    _, x = setup.generate(kind, inj, seed, args.n or 1, seed + 1)
    path = _out(args, "embedded.npy")
    np.save(path, x)
    print(f"message {message_to_hex(setup.message)} -> {path} ({x.shape[0]} images, D={x.shape[1]})")
    return 0


def cmd_extract(args) -> int:
    cfg = _load_config(args)
    setup = Setup.from_config(cfg)
    x = np.atleast_2d(np.load(args.input))
    bits, stat = setup.read(x)
    acc = bit_accuracy(np.broadcast_to(setup.message, bits.shape), bits)
    for row_bits, row_stat, row_acc in zip(bits, stat, acc):
        print(f"{message_to_hex(row_bits)}\tstat={row_stat:.4f}\tbit_acc={row_acc:.4f}")
    return 0


def cmd_attack(args) -> int:
    cfg = _load_config(args)
    setup = Setup.from_config(cfg)
    spec = AttackSpec(args.attack, args.param, rinse_n=args.rinse)
    x = np.atleast_2d(np.load(args.input))
    if spec.kind == "regen":
        y = regenerate(x, setup.oracle, setup.schedule, setup.vae, spec, cfg.master_seed)
    else:
        y = apply_distortion(x, spec, np.random.default_rng(cfg.master_seed))
    path = _out(args, "attacked.npy")
    np.save(path, y)
    print(f"{spec.label} -> {path}")
    return 0


def cmd_suite(args) -> int:
    cfg = _load_config(args)
    cfg.out = str(_out(args, "suite.csv"))
    records = run_suite(cfg)
    if args.json:
        write_json(records, args.json)
    print(f"{len(records)} cells -> {cfg.out}")
    return 0


def _parse_grid(text: str):
    grid = []
    for cell in text.split(","):
        win, _, lam = cell.partition("@")
        grid.append((_window(win), float(lam or 1.0)))
    return grid


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    grid = _parse_grid(args.grid) if args.grid else default_sweep_grid(cfg.T)
    rows = sweep_ablation(grid, cfg)
    path = _out(args, "sweep.csv")
    write_rows_csv(rows, path, SWEEP_COLUMNS)
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2))
    print(f"{len(rows)} cells -> {path}")
    return 0


def cmd_diagnostics(args) -> int:
    cfg = _load_config(args)
    setup = Setup.from_config(cfg)
    kind = SamplerKind.parse(cfg.samplers[0])
    runs = [
        sample(kind, setup.oracle, setup.schedule, setup.steps, setup.injection(p), cfg.master_seed, args.n)
        for p in ("Q", "R")
    ]
    rows = diagnostics(setup.schedule, *runs)
    path = _out(args, "diagnostics.csv")
    write_rows_csv(rows, path, ["t", "gamma", "eps_norm_Q", "eps_norm_R"])
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2))
    print(f"{len(rows)} steps -> {path}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    if args.input:
        path = Path(args.input)
        stats = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, ndmin=1)
    else:
        setup = Setup.from_config(cfg)
        kind = SamplerKind.parse(cfg.samplers[0])
        _, x = setup.generate(kind, None, cfg.master_seed, cfg.n_seeds, cfg.master_seed + 1)
        stats = setup.read(x)[1]
    thr = calibrate_threshold(stats, args.fpr if args.fpr is not None else cfg.fpr_target)
    print(repr(thr))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output path")
    common.add_argument("--json", help="also write a JSON mirror of the output here")
    common.add_argument("--preset", choices=["Q", "R"])
    common.add_argument(
        "--sampler",
        action="append",
        help="ddim, ddim:<eta>, ancestral, em-sde or pf-ode (repeatable)",
    )
    common.add_argument("--steps", type=int, help="sampling steps (<= T)")
    common.add_argument("--lambda", dest="strength", type=float, help="injection strength")
    common.add_argument("--window", type=_window, help="injection window a:b, inclusive, 1 <= a <= b <= T")
    common.add_argument("--n", type=int, help="number of samples")

    parser = argparse.ArgumentParser(prog="driftmark", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", parents=[common], help="generate watermarked toy images (.npy)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", parents=[common], help="decode bits from toy images")
    p.add_argument("input")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("attack", parents=[common], help="distort or regenerate toy images")
    p.add_argument("input")
    p.add_argument("--attack", required=True, help="noise, brightness, contrast, quantize, lowpass, crop, vae, regen")
    p.add_argument("--param", type=float)
    p.add_argument("--rinse", type=int, default=1, help="regeneration rounds")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("suite", parents=[common], help="sampler x attack x preset evaluation (CSV)")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("sweep", parents=[common], help="window x strength ablation (CSV)")
    p.add_argument("--grid", help="comma list of a:b@lambda cells")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnostics", parents=[common], help="per-step modulation and noise norms (CSV)")
    p.set_defaults(func=cmd_diagnostics)

    p = sub.add_parser("calibrate", parents=[common], help="detection threshold at a target FPR")
    p.add_argument("input", nargs="?", help="clean scores (.npy or one per line)")
    p.add_argument("--fpr", type=float)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # report, don't dump a traceback
        print(f"driftmark {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
