import inspect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftmark.injection import InjectionConfig, corrected_eps, make_preset, mirror_window, scale_window
from driftmark.schedule import build_schedule
from driftmark.score_oracle import reparameterize


def make(delta=None, strength=1.0, window=(1, 50)):
    delta = np.ones(4) if delta is None else delta
    return InjectionConfig(delta, strength, *window)


class TestPresets:
    def test_quality_preset(self, sched50):
        cfg = make_preset("Q", sched50, np.ones(3))
        assert cfg.window == (20, 45) and cfg.strength == 0.85 and cfg.preset == "Q"

    def test_robust_preset(self, sched50):
        cfg = make_preset("R", sched50, np.ones(3))
        assert cfg.window == (1, 50) and cfg.strength == 1.0 and cfg.preset == "R"

    def test_scaled_quality_preset(self):
        cfg = make_preset("Q", build_schedule("linear", 100), np.ones(3))
        assert cfg.window == (40, 90) and cfg.strength == 0.85

    @pytest.mark.parametrize("T", [1, 3, 7, 10, 33, 1000])
    def test_preset_windows_in_range(self, T):
        s = build_schedule("linear", T)
        for kind in ("Q", "R"):
            cfg = make_preset(kind, s, np.ones(2))
            assert 1 <= cfg.t_start <= cfg.t_end <= T
            cfg.validate_for(s, 2)

    def test_unknown_preset(self, sched50):
        with pytest.raises(ValueError):
            make_preset("X", sched50, np.ones(3))

    def test_empty_delta(self, sched50):
        with pytest.raises(ValueError):
            make_preset("Q", sched50, np.array([]))

    def test_scale_window_rounds_half_up(self):
        assert scale_window(20, 45, 10) == (4, 9)
        assert scale_window(5, 15, 10) == (1, 3)  # 1.0, 3.0
        assert scale_window(25, 25, 1) == (1, 1)

    def test_mirror(self):
        assert mirror_window(20, 45, 50) == (6, 31)
        assert mirror_window(*mirror_window(20, 45, 50), 50) == (20, 45)


class TestConfig:
    @pytest.mark.parametrize("window", [(0, 5), (6, 5), (-1, 2)])
    def test_bad_window(self, window):
        with pytest.raises(ValueError):
            make(window=window)

    def test_window_beyond_schedule(self, sched50):
        with pytest.raises(ValueError):
            make(window=(10, 51)).validate_for(sched50)

    def test_delta_length_check(self, sched50):
        with pytest.raises(ValueError):
            make(delta=np.ones(3)).validate_for(sched50, 4)

    def test_negative_strength(self):
        with pytest.raises(ValueError):
            make(strength=-0.1)

    def test_json_round_trip(self):
        cfg = InjectionConfig(np.array([0.5, -1.0]), 0.85, 20, 45, "Q")
        d = cfg.to_dict()
        assert set(d) == {"delta", "lambda", "t_start", "t_end", "preset"}
        back = InjectionConfig.from_json(cfg.to_json())
        np.testing.assert_array_equal(back.delta, cfg.delta)
        assert (back.strength, back.window, back.preset) == (0.85, (20, 45), "Q")

    def test_with_strength(self):
        cfg = make(strength=1.0).with_strength(0.3)
        assert cfg.strength == 0.3 and cfg.preset == "custom"


class TestCorrectedEps:
    def test_zero_strength(self, sched50):
        eps = np.arange(4.0)
        np.testing.assert_array_equal(corrected_eps(eps, make(strength=0.0), sched50, 10), eps)

    def test_outside_window(self, sched50):
        eps = np.arange(4.0)
        cfg = make(window=(20, 45))
        for t in (1, 19, 46, 50):
            np.testing.assert_array_equal(corrected_eps(eps, cfg, sched50, t), eps)
        assert not np.array_equal(corrected_eps(eps, cfg, sched50, 20), eps)
        assert not np.array_equal(corrected_eps(eps, cfg, sched50, 45), eps)

    def test_unit_gamma(self):
        s = build_schedule("linear", 1, 0.5, 0.5)
        e1 = np.array([1.0, 0.0, 0.0])
        eps = np.array([0.2, 0.3, 0.4])
        cfg = InjectionConfig(e1, 1.0, 1, 1)
        np.testing.assert_allclose(corrected_eps(eps, cfg, s, 1), eps - e1, atol=1e-15)

    def test_dimension_mismatch(self, sched50):
        with pytest.raises(ValueError):
            corrected_eps(np.zeros(3), make(), sched50, 5)

    def test_batched(self, sched50):
        eps = np.random.default_rng(0).standard_normal((7, 4))
        out = corrected_eps(eps, make(), sched50, 5)
        np.testing.assert_allclose(out, [corrected_eps(e, make(), sched50, 5) for e in eps])

    def test_takes_no_sampler_state(self):
        assert list(inspect.signature(corrected_eps).parameters) == ["eps", "cfg", "s", "t"]

    @given(
        st.integers(1, 500),
        st.floats(0.0, 3.0),
        st.integers(0, 2**31 - 1),
        st.sampled_from(["linear", "cosine"]),
        st.data(),
    )
    @settings(max_examples=100, deadline=None)
    def test_z0_constraint_identity(self, T, lam, seed, kind, data):
        s = build_schedule(kind, T)
        t = data.draw(st.integers(1, T))
        rng = np.random.default_rng(seed)
        z, eps, delta = rng.standard_normal((3, 5))
        cfg = InjectionConfig(delta, lam, 1, T)
        raw = reparameterize(z, eps, s, t, "eps", "z0")
        new = reparameterize(z, corrected_eps(eps, cfg, s, t), s, t, "eps", "z0")
        np.testing.assert_allclose(new, raw + lam * delta, atol=1e-10)

    @given(st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.integers(1, 50), st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_linear_in_strength(self, lam1, lam2, t, seed):
        s = build_schedule("linear", 50)
        rng = np.random.default_rng(seed)
        eps, delta = rng.standard_normal((2, 6))
        twice = corrected_eps(corrected_eps(eps, make(delta, lam1), s, t), make(delta, lam2), s, t)
        once = corrected_eps(eps, make(delta, lam1 + lam2), s, t)
        np.testing.assert_allclose(twice, once, atol=1e-9 * max(1.0, s.modulation_coeff(t)))
