import math

import numpy as np
import pytest

from driftmark.codec import bit_accuracy, decode_message, encode_message, make_codebook, random_message
from driftmark.injection import InjectionConfig, make_preset
from driftmark.sampler import (
    ANCESTRAL,
    DDIM,
    EM_SDE,
    PF_ODE,
    SamplerKind,
    ddim_invert,
    paired_sample,
    predict,
    run_chain,
    sample,
    step,
    step_grid,
)
from driftmark.schedule import build_schedule
from driftmark.score_oracle import standard_normal_oracle

ALL_KINDS = [DDIM, SamplerKind("ddim", 1.0), ANCESTRAL, EM_SDE, PF_ODE]


def abar_table(betas):
    """alpha_bar with index 0 meaning t=0, computed by a plain loop."""
    out = [1.0]
    for b in betas:
        out.append(out[-1] * (1.0 - b))
    return out


def shift_recursion(betas, grid, lam, window):
    """Scalar K such that DDIM(eta=0) on N(0, I) data shifts z0 by K * delta."""
    ab = abar_table(betas)
    ts = list(grid) + [0]
    K = 0.0
    for t, tp in zip(ts[:-1], ts[1:]):
        c = math.sqrt(ab[tp] * ab[t]) + math.sqrt((1 - ab[tp]) * (1 - ab[t]))
        if window[0] <= t <= window[1]:
            gamma = lam * math.sqrt(ab[t]) / math.sqrt(1 - ab[t])
            K = c * K + math.sqrt(ab[tp]) * lam - math.sqrt(1 - ab[tp]) * gamma
        else:
            K = c * K
    return K


class TestSamplerKind:
    def test_parse_and_label(self):
        assert SamplerKind.parse("ddim:0.5") == SamplerKind("ddim", 0.5)
        assert SamplerKind.parse("em-sde").label == "em-sde"
        assert DDIM.label == "ddim(eta=0)"
        assert SamplerKind("ddim", 1.0).stochastic and not DDIM.stochastic and not PF_ODE.stochastic

    @pytest.mark.parametrize("name,eta", [("ddim", 1.5), ("ddim", -0.1), ("ancestral", 0.5), ("heun", 0.0)])
    def test_invalid(self, name, eta):
        with pytest.raises(ValueError):
            SamplerKind(name, eta)


class TestStepGrid:
    def test_full_and_sub_grids(self):
        assert step_grid(50, 50) == list(range(50, 0, -1))
        g = step_grid(1000, 10)
        assert g[0] == 1000 and g[-1] == 1 and len(g) == 10 and len(set(g)) == 10
        assert all(a > b for a, b in zip(g, g[1:]))
        assert step_grid(7, 1) == [7]

    @pytest.mark.parametrize("steps", [0, 51])
    def test_bad_steps(self, steps):
        with pytest.raises(ValueError):
            step_grid(50, steps)


class TestStep:
    def test_ddim_standard_normal_contraction(self, std_normal, sched50):
        z = np.random.default_rng(0).standard_normal(std_normal.dim)
        for t, tp in ((50, 49), (30, 10), (1, 0), (50, 0)):
            ab, abp = sched50.abar(t), sched50.abar(tp)
            c = math.sqrt(abp * ab) + math.sqrt((1 - abp) * (1 - ab))
            out = step(DDIM, std_normal, sched50, z, t, tp, noise=np.zeros_like(z))
            np.testing.assert_allclose(out, c * z, atol=1e-13)

    def test_ancestral_zero_noise_is_posterior_mean(self, small_mixture, sched50):
        z = np.random.default_rng(1).standard_normal(small_mixture.dim)
        for t in (50, 20, 2, 1):
            beta, ab = sched50.beta(t), sched50.alpha_bar(t)
            eps = small_mixture.eps(sched50, z, t)
            mean = (z - beta / math.sqrt(1 - ab) * eps) / math.sqrt(1 - beta)
            out = step(ANCESTRAL, small_mixture, sched50, z, t, t - 1, noise=np.zeros_like(z))
            np.testing.assert_allclose(out, mean, atol=1e-12)

    def test_ddim_and_flow_agree_on_fine_grid(self, std_normal, sched1000):
        z = np.random.default_rng(2).standard_normal(std_normal.dim)
        noise = np.zeros_like(z)
        for t in (1000, 500, 2):
            a = step(DDIM, std_normal, sched1000, z, t, t - 1, noise=noise)
            b = step(PF_ODE, std_normal, sched1000, z, t, t - 1, noise=noise)
            assert np.max(np.abs(a - b)) < 1e-2

    def test_flow_error_shrinks_with_step(self, std_normal):
        errs = []
        for T in (100, 200, 400):
            s = build_schedule("linear", T, 1e-4 * 1000 / T, 0.02 * 1000 / T)
            z = np.ones(std_normal.dim)
            t = T // 2
            a = step(DDIM, std_normal, s, z, t, t - 1, noise=np.zeros_like(z))
            b = step(PF_ODE, std_normal, s, z, t, t - 1, noise=np.zeros_like(z))
            errs.append(np.max(np.abs(a - b)))
        assert errs[0] > errs[1] > errs[2]

    def test_errors(self, std_normal, sched50):
        z = np.zeros(std_normal.dim)
        with pytest.raises(ValueError):
            step(DDIM, std_normal, sched50, z, 5, 5, rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            step(DDIM, std_normal, sched50, np.zeros(3), 5, 4, rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            step(DDIM, std_normal, sched50, z, 5, 4)

    def test_injection_applied_before_update(self, small_mixture, sched50):
        delta = np.arange(5.0)
        cfg = InjectionConfig(delta, 0.6, 1, 50)
        z = np.ones(5)
        eps, z0_hat, eps_raw, raw = predict(small_mixture, sched50, z, 12, cfg)
        np.testing.assert_allclose(eps_raw - eps, sched50.modulation_coeff(12, 0.6) * delta, atol=1e-12)
        np.testing.assert_allclose(z0_hat - raw, 0.6 * delta, atol=1e-10)
        for kind in ALL_KINDS:
            a = step(kind, small_mixture, sched50, z, 12, 11, cfg, noise=np.zeros(5))
            b = step(kind, small_mixture, sched50, z, 12, 11, None, noise=np.zeros(5))
            assert not np.allclose(a, b)


class TestSample:
    def test_trajectory_shape(self, small_mixture, sched50):
        traj = sample(ANCESTRAL, small_mixture, sched50, 10, None, seed=3)
        assert len(traj.states) == 11 and traj.states[0].t == 50 and traj.states[-1].t == 0
        assert len(traj.eps_norms) == 10 and traj.seed == 3

    @pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.label)
    def test_deterministic(self, small_mixture, sched50, kind):
        a = sample(kind, small_mixture, sched50, None, None, seed=9)
        b = sample(kind, small_mixture, sched50, None, None, seed=9)
        for sa, sb in zip(a.states, b.states):
            np.testing.assert_array_equal(sa.z, sb.z)

    def test_steps_exceed_T(self, small_mixture, sched50):
        with pytest.raises(ValueError):
            sample(DDIM, small_mixture, sched50, 51)

    @pytest.mark.parametrize("kind", [ANCESTRAL, EM_SDE, SamplerKind("ddim", 1.0)], ids=lambda k: k.label)
    def test_stochastic_diversity(self, small_mixture, sched50, kind):
        a = sample(kind, small_mixture, sched50, seed=1).z0
        b = sample(kind, small_mixture, sched50, seed=2).z0
        assert np.linalg.norm(a - b) > 1e-3

    @pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.label)
    def test_stationary_moments(self, sched1000, kind):
        o = standard_normal_oracle(4)
        n = 10_000
        z0 = sample(kind, o, sched1000, None, None, seed=2024, n=n).z0
        assert np.all(np.abs(z0.mean(axis=0)) < 4 / math.sqrt(n))
        assert np.all(np.abs(z0.var(axis=0) - 1.0) < 0.05)

    def test_batched_matches_rows_for_deterministic(self, small_mixture, sched50):
        batch = sample(DDIM, small_mixture, sched50, 20, None, seed=5, n=3)
        zT = batch.states[0].z
        for i in range(3):
            single = run_chain(DDIM, small_mixture, sched50, zT[i], step_grid(50, 20), np.random.default_rng(0))
            np.testing.assert_allclose(single.z0, batch.z0[i], atol=1e-12)

    def test_mixture_end_to_end_bits(self, mixture, sched50):
        cb = make_codebook(mixture.dim, 32, 0.75, seed=0)
        m = random_message(32, np.random.default_rng(1))
        cfg = InjectionConfig(encode_message(m, cb), 1.0, 1, 50)
        z0 = sample(DDIM, mixture, sched50, None, cfg, seed=0, n=200).z0
        acc = bit_accuracy(np.broadcast_to(m, (200, 32)), decode_message(z0, cb))
        assert np.mean(acc) >= 0.99

    @pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.label)
    def test_per_step_constraint(self, mixture, sched50, kind):
        delta = np.random.default_rng(4).standard_normal(mixture.dim)
        cfg = make_preset("Q", sched50, delta)
        traj = sample(kind, mixture, sched50, None, cfg, seed=4, n=5)
        errs = np.array(traj.constraint_errors)
        assert np.max(errs) < 1e-10
        active = [t for t in traj.timesteps[:-1] if cfg.active(t)]
        assert len(active) == 26

    def test_eps_norms_R_above_Q_late(self, mixture, sched50, default_setup):
        q = sample(DDIM, mixture, sched50, None, default_setup.injection("Q"), seed=0, n=50)
        r = sample(DDIM, mixture, sched50, None, default_setup.injection("R"), seed=0, n=50)
        nq, nr = q.eps_norm_by_t(), r.eps_norm_by_t()
        assert all(nr[t] > nq[t] for t in range(1, 20))

    def test_csv_export(self, small_mixture, sched50, tmp_path):
        traj = sample(DDIM, small_mixture, sched50, 5, None, seed=0)
        path = tmp_path / "traj.csv"
        traj.to_csv(path, include_z=True)
        lines = path.read_text().splitlines()
        assert lines[0].split(",")[:3] == ["step", "t", "eps_norm"] and len(lines) == 7
        assert len(lines[1].split(",")) == 3 + small_mixture.dim


class TestPairedSample:
    def test_null_injection(self, mixture, sched50):
        cfg = InjectionConfig(np.ones(mixture.dim), 0.0, 1, 50)
        for kind in ALL_KINDS:
            a, b = paired_sample(kind, mixture, sched50, None, cfg, seed=3)
            np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("T,steps,window", [(10, 10, (1, 10)), (50, 50, (1, 50)), (50, 50, (20, 45)), (50, 12, (1, 50))])
    def test_closed_form_shift(self, T, steps, window):
        s = build_schedule("linear", T)
        o = standard_normal_oracle(5)
        rng = np.random.default_rng(T + steps)
        lam, delta = rng.uniform(0.1, 2.0), rng.standard_normal(5)
        cfg = InjectionConfig(delta, lam, *window)
        clean, marked = paired_sample(DDIM, o, s, steps, cfg, seed=1)
        K = shift_recursion(s.betas, step_grid(T, steps), lam, window)
        np.testing.assert_allclose(marked - clean, K * delta, atol=1e-8)

    def test_em_shift_colinear(self, mixture, sched50):
        delta = np.random.default_rng(0).standard_normal(mixture.dim)
        delta /= np.linalg.norm(delta)
        cfg = InjectionConfig(delta, 1.0, 1, 50)
        clean, marked = paired_sample(EM_SDE, mixture, sched50, None, cfg, seed=5, n=100)
        diff = marked - clean
        cos = diff @ delta / np.linalg.norm(diff, axis=1)
        assert np.mean(cos) > 0.9


class TestInversion:
    def test_zero_steps(self, small_mixture, sched50):
        z = np.arange(5.0)
        np.testing.assert_array_equal(ddim_invert(small_mixture, sched50, z, 0), z)

    def test_standard_normal_exact(self, std_normal, sched50):
        z0 = np.random.default_rng(0).standard_normal(std_normal.dim)
        ab = abar_table(sched50.betas)
        ts = list(step_grid(50, 25)) + [0]
        prod = 1.0
        for t, tp in zip(ts[:-1], ts[1:]):
            prod *= math.sqrt(ab[tp] * ab[t]) + math.sqrt((1 - ab[tp]) * (1 - ab[t]))
        np.testing.assert_allclose(ddim_invert(std_normal, sched50, z0, 25), z0 / prod, rtol=1e-10)

    def test_mixture_round_trip(self, mixture, sched50):
        traj = sample(DDIM, mixture, sched50, 50, None, seed=8, n=4)
        zT = ddim_invert(mixture, sched50, traj.z0, 50)
        back = run_chain(DDIM, mixture, sched50, zT, step_grid(50, 50), np.random.default_rng(0)).z0
        rel = np.linalg.norm(back - traj.z0, axis=1) / np.linalg.norm(traj.z0, axis=1)
        assert np.all(rel < 0.05)
        np.testing.assert_allclose(zT, traj.states[0].z, atol=1e-6)

    def test_explicit_variant_is_approximate(self, mixture, sched50):
        traj = sample(DDIM, mixture, sched50, 50, None, seed=8)
        approx = ddim_invert(mixture, sched50, traj.z0, 50, exact=False)
        exact = ddim_invert(mixture, sched50, traj.z0, 50)
        assert np.linalg.norm(approx - traj.states[0].z) > np.linalg.norm(exact - traj.states[0].z)

    def test_dimension_mismatch(self, mixture, sched50):
        with pytest.raises(ValueError):
            ddim_invert(mixture, sched50, np.zeros(3), 5)
