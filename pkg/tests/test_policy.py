import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cotprune.mapping import MappingMode
from cotprune.policy import (
    ConfigError,
    EngineConfig,
    adaptive_n,
    adaptive_n_array,
    dynamic_threshold,
    refine_n,
    retention_rate,
    windowed_entropy,
    windowed_means,
)
from cotprune.trace import ContractError


class TestEngineConfig:
    def test_defaults_are_valid(self):
        cfg = EngineConfig()
        assert cfg.gamma_min == 0.2
        assert cfg.gamma_max == 0.8
        assert cfg.gamma_base == 0.6
        assert cfg.n_min == 1 and cfg.n_max == 9 and cfg.window == 9
        assert cfg.s_gamma == 1.8 and cfg.s_n == 1.8
        assert cfg.theta_critical == 0.4
        assert cfg.delta_high == 0.3 and cfg.delta_low == 0.05

    @pytest.mark.parametrize(
        "kwargs, fragment",
        [
            ({"gamma_min": 0.9}, "gamma_min"),
            ({"gamma_abs_min": 0.3}, "gamma_abs_min"),
            ({"gamma_abs_max": 0.7}, "gamma_abs_max"),
            ({"n_min": 5, "n_max": 2}, "n_min"),
            ({"window": 4}, "window"),
            ({"theta_critical": 1.5}, "theta_critical"),
            ({"delta_low": 0.5}, "delta_low"),
            ({"gamma_target": 2.0}, "gamma_target"),
            ({"s_gamma": -1.0}, "s_gamma"),
        ],
    )
    def test_violations_name_the_bound(self, kwargs, fragment):
        with pytest.raises(ConfigError, match=fragment):
            EngineConfig(**kwargs)

    def test_dict_round_trip(self):
        cfg = EngineConfig(gamma_target=0.55, mapping_mode=MappingMode.TANH)
        again = EngineConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_unknown_keys_ignored(self):
        cfg = EngineConfig.from_dict({"gamma_base": 0.5, "gamma_min": 0.2,
                                      "gamma_max": 0.8, "h_median": 1.0,
                                      "mystery": 42})
        assert cfg.gamma_base == 0.5


class TestRetentionRate:
    def test_endpoints(self):
        cfg = EngineConfig()
        assert retention_rate(0.0, cfg) == 0.2
        assert retention_rate(1.0, cfg) == 0.8
        assert retention_rate(0.5, cfg) == pytest.approx(0.5, abs=1e-15)

    def test_hard_clip(self):
        # hard floor above the soft floor is rejected outright...
        with pytest.raises(ConfigError):
            EngineConfig(gamma_min=0.1, gamma_abs_min=0.15)
        # ...and an equal hard floor clips nothing away
        cfg = EngineConfig(gamma_abs_min=0.2)
        assert retention_rate(0.0, cfg) == 0.2

    @settings(max_examples=200, deadline=None)
    @given(a=st.floats(0, 1), b=st.floats(0, 1))
    def test_monotone(self, a, b):
        cfg = EngineConfig()
        lo, hi = sorted((a, b))
        assert retention_rate(lo, cfg) <= retention_rate(hi, cfg)


def brute_force_quantile(values, q):
    """Independent check: sort, then interpolate between order statistics."""
    s = sorted(values)
    pos = (len(s) - 1) * q
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


class TestDynamicThreshold:
    def test_seventieth_percentile(self):
        assert dynamic_threshold(0.3, list(range(1, 11))) == pytest.approx(7.3, abs=1e-12)

    def test_gamma_one_keeps_everything(self):
        scores = [4.0, 9.5, 1.2, 7.7]
        assert dynamic_threshold(1.0, scores) == min(scores)

    def test_degenerate_distribution(self):
        for gamma in (0.1, 0.5, 0.9, 1.0):
            assert dynamic_threshold(gamma, [7.0] * 5) == 7.0

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            dynamic_threshold(0.5, [])

    def test_matches_brute_force_and_numpy(self, rng):
        for _ in range(500):
            n = int(rng.integers(1, 60))
            vals = rng.lognormal(0, 1, n)
            if rng.random() < 0.3:
                vals = rng.integers(0, 5, n).astype(float)  # ties
            gamma = float(rng.uniform(0.01, 1.0))
            got = dynamic_threshold(gamma, vals)
            assert got == pytest.approx(
                brute_force_quantile(vals.tolist(), 1 - gamma), abs=1e-12
            )
            assert got == pytest.approx(
                float(np.percentile(vals, (1 - gamma) * 100)), abs=1e-12
            )

    def test_kept_fraction_bracket_on_distinct_scores(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 200))
            vals = rng.permutation(np.arange(n, dtype=float) + rng.random())
            gamma = float(rng.uniform(0.05, 1.0))
            tau = dynamic_threshold(gamma, vals)
            frac = float(np.mean(vals >= tau))
            assert gamma - 1.0 / n <= frac <= gamma + 1.0 / n


class TestWindowedEntropy:
    def test_constant_sequence(self):
        seq = [0.7] * 9
        for t in range(9):
            assert windowed_entropy(seq, t, 5) == pytest.approx(0.7, abs=1e-15)

    def test_left_edge_padding(self):
        assert windowed_entropy([1, 2, 3, 4, 5], 0, 3) == pytest.approx(4.0 / 3.0)

    def test_interior_window(self):
        assert windowed_entropy([1, 2, 3, 4, 5], 2, 3) == pytest.approx(3.0)

    def test_right_edge_padding(self):
        # window at the last position replicates the final value
        assert windowed_entropy([1, 2, 3, 4, 5], 4, 3) == pytest.approx(14.0 / 3.0)

    def test_even_window_rejected(self):
        with pytest.raises(ContractError):
            windowed_entropy([1.0, 2.0], 0, 4)

    def test_position_out_of_range_rejected(self):
        with pytest.raises(ContractError):
            windowed_entropy([1.0, 2.0], 2, 3)

    def test_window_exceeding_length(self):
        # padding keeps exactly W summands even when W > sequence length
        assert windowed_entropy([2.0], 0, 9) == pytest.approx(2.0)

    def test_vector_matches_direct_mean(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 40))
            w = int(rng.choice([1, 3, 5, 9, 15]))
            seq = rng.random(n)
            half = w // 2
            padded = np.concatenate([[seq[0]] * half, seq, [seq[-1]] * half])
            means = windowed_means(seq, w)
            for t in range(n):
                assert means[t] == pytest.approx(
                    float(np.mean(padded[t : t + w])), abs=1e-12
                )


class TestAdaptiveN:
    def test_endpoints(self):
        cfg = EngineConfig()
        assert adaptive_n(0.0, cfg) == 9
        assert adaptive_n(1.0, cfg) == 1

    def test_midpoint(self):
        assert adaptive_n(0.5, EngineConfig()) == 5

    def test_always_in_range(self, rng):
        cfg = EngineConfig(n_min=2, n_max=7)
        for h in rng.random(500):
            assert 2 <= adaptive_n(float(h), cfg) <= 7

    def test_monotone_nonincreasing(self, rng):
        cfg = EngineConfig()
        hs = np.sort(rng.random(100))
        ns = adaptive_n_array(hs, cfg)
        assert np.all(np.diff(ns) <= 0)


class TestRefineN:
    def test_sharp_transition_shrinks(self):
        cfg = EngineConfig()
        n, stable = refine_n(5, 0.9, 0.5, 2, cfg)
        assert (n, stable) == (4, 0)  # floor(5 * 0.8 + 0.5)

    def test_stability_relaxes_after_three_steps(self):
        cfg = EngineConfig()
        n, stable = refine_n(5, 0.50, 0.505, 2, cfg)
        assert (n, stable) == (6, 3)

    def test_stability_below_run_leaves_cap(self):
        cfg = EngineConfig()
        n, stable = refine_n(5, 0.50, 0.505, 0, cfg)
        assert (n, stable) == (5, 1)

    def test_intermediate_delta_resets(self):
        cfg = EngineConfig()
        n, stable = refine_n(5, 0.5, 0.35, 2, cfg)
        assert (n, stable) == (5, 0)

    def test_shrink_clamps_at_floor(self):
        cfg = EngineConfig()
        n, stable = refine_n(1, 0.95, 0.05, 0, cfg)
        assert (n, stable) == (1, 0)

    def test_relax_clamps_at_ceiling(self):
        cfg = EngineConfig()
        n, _ = refine_n(9, 0.5, 0.5, 5, cfg)
        assert n == 9

    def test_global_target_rescales(self):
        cfg = EngineConfig(gamma_base=0.6, gamma_target=0.3)
        # aggressive target doubles the cap (then the range clips)
        n, _ = refine_n(4, 0.5, 0.48, 0, cfg)
        assert n == 8
        n, _ = refine_n(5, 0.5, 0.48, 0, cfg)
        assert n == 9  # 10 clipped to n_max

    def test_target_equal_to_base_is_identity(self):
        cfg = EngineConfig(gamma_target=0.6)
        n, _ = refine_n(5, 0.5, 0.49, 0, cfg)
        assert n == 5

    def test_never_leaves_range(self, rng):
        cfg = EngineConfig(n_min=2, n_max=6, gamma_target=0.25)
        stable = 0
        prev = 0.5
        for _ in range(300):
            now = float(rng.random())
            n_in = int(rng.integers(2, 7))
            n, stable = refine_n(n_in, now, prev, stable, cfg)
            assert 2 <= n <= 6
            prev = now
