"""Full evaluation: sampler x attack x preset suite, window/strength sweep and
per-step diagnostics, written as CSV to the working directory."""

from driftmark import ExperimentConfig, SamplerKind, Setup, run_suite, sample
from driftmark.harness import default_sweep_grid, diagnostics, sweep_ablation, write_csv, write_rows_csv

cfg = ExperimentConfig()
records = run_suite(cfg)
print(write_csv(records))

rows = sweep_ablation(default_sweep_grid(cfg.T), cfg)
for r in rows:
    print(f"window [{r['t_start']},{r['t_end']}] lambda {r['lambda']}: acc {r['acc']:.3f}, PSNR {r['psnr']:.1f}")

setup = Setup.from_config(cfg)
kind = SamplerKind.parse("ddim")
runs = [sample(kind, setup.oracle, setup.schedule, None, setup.injection(p), 0, 100) for p in "QR"]
write_rows_csv(diagnostics(setup.schedule, *runs), "diagnostics.csv", ["t", "gamma", "eps_norm_Q", "eps_norm_R"])
print("per-step diagnostics -> diagnostics.csv")
