import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import build_trace

from cotprune.policy import EngineConfig
from cotprune.trace import ContractError
from cotprune.tuner import (
    DatasetFeatures,
    TunerError,
    estimate_target_ratio,
    extract_features,
    tune,
    update_params,
)


def features(**kw):
    base = dict(mean_len=100.0, len_std=10.0, h_mean=0.8, h_median=0.7,
                h_std=0.3, h_max_mean=2.0, gogi_tail_ratio=0.1)
    base.update(kw)
    return DatasetFeatures(**base)


class TestExtract:
    def test_constant_entropy_trace(self):
        tr = build_trace([1, 2, 3, 4], [1.0] * 4)
        f = extract_features([tr])
        assert f.h_mean == 1.0
        assert f.h_median == 1.0
        assert f.h_std == 0.0
        assert f.mean_len == 4.0

    def test_mean_length(self):
        t1 = build_trace([1.0] * 10, [0.5] * 10)
        t2 = build_trace([1.0] * 30, [0.5] * 30)
        assert extract_features([t1, t2]).mean_len == 20.0

    def test_tail_ratio_on_distinct_scores(self, rng):
        # 1,000 distinct scores: exactly 100 sit strictly above the 90th
        # percentile, so the tail share is 0.1
        scores = rng.permutation(np.arange(1000, dtype=float) + 0.5)
        tr = build_trace(scores, rng.random(1000) + 0.1)
        assert extract_features([tr]).gogi_tail_ratio == pytest.approx(0.1)

    def test_entropy_pools_valid_only(self):
        tr = build_trace([1, 1], [5.0, 1.0], valid=[False, True])
        f = extract_features([tr])
        assert f.h_mean == 1.0
        assert f.h_max_mean == 1.0

    def test_empty_corpus(self):
        with pytest.raises(ContractError):
            extract_features([])

    def test_no_valid_tokens_anywhere(self):
        tr = build_trace([1.0], [0.5], valid=[False])
        with pytest.raises(ContractError):
            extract_features([tr])


class TestEstimate:
    def test_zero_dispersion(self):
        # defaults: 0.6 - 0.25 * (0.6 - 0.2) = 0.5
        got = estimate_target_ratio(features(h_std=0.0), EngineConfig())
        assert got == pytest.approx(0.5, abs=1e-12)

    def test_saturated_dispersion(self):
        # defaults: 0.6 + 0.5 * (0.8 - 0.6) = 0.7
        got = estimate_target_ratio(features(h_std=5.0), EngineConfig())
        assert got == pytest.approx(0.7, abs=1e-12)

    def test_collapsed_bounds(self):
        cfg = EngineConfig(gamma_min=0.5, gamma_base=0.5, gamma_max=0.5)
        assert estimate_target_ratio(features(), cfg) == 0.5

    @settings(max_examples=200, deadline=None)
    @given(
        a=st.floats(min_value=0.0, max_value=3.0),
        b=st.floats(min_value=0.0, max_value=3.0),
    )
    def test_monotone_in_dispersion(self, a, b):
        lo, hi = sorted((a, b))
        cfg = EngineConfig()
        assert estimate_target_ratio(
            features(h_std=lo), cfg
        ) <= estimate_target_ratio(features(h_std=hi), cfg)

    def test_stays_inside_soft_bounds(self, rng):
        cfg = EngineConfig()
        for _ in range(200):
            f = features(h_std=float(rng.uniform(0, 4)),
                         h_median=float(rng.uniform(0.01, 3)))
            got = estimate_target_ratio(f, cfg)
            assert cfg.gamma_min <= got <= cfg.gamma_max


class TestUpdate:
    def test_recenter_at_base(self):
        out = update_params(EngineConfig(), 0.6)
        assert out.gamma_target == 0.6
        assert out.gamma_base == 0.6
        assert out.gamma_min == pytest.approx(0.3, abs=1e-12)
        assert out.gamma_max == pytest.approx(0.9, abs=1e-12)

    def test_low_target_clips_at_hard_floor(self):
        out = update_params(EngineConfig(), 0.2)
        assert out.gamma_min == 0.05
        assert out.gamma_max == pytest.approx(0.5, abs=1e-12)
        assert out.gamma_base == 0.2

    def test_out_of_range_target(self):
        with pytest.raises(ContractError):
            update_params(EngineConfig(), 1.5)

    def test_inconsistent_result_names_bound(self):
        # a target below the hard floor leaves gamma_min > gamma_base
        with pytest.raises(TunerError, match="gamma"):
            update_params(EngineConfig(), 0.02)

    def test_output_valid_or_raises(self, rng):
        for _ in range(300):
            t = float(rng.uniform(0.01, 0.99))
            try:
                out = update_params(EngineConfig(), t)
            except TunerError:
                continue
            assert out.gamma_min <= out.gamma_base <= out.gamma_max


class TestPipeline:
    def test_deterministic(self, rng):
        traces = [
            build_trace(rng.lognormal(0, 1, 50), rng.lognormal(0, 0.5, 50))
            for _ in range(5)
        ]
        a_cfg, a_feats, a_target = tune(traces, EngineConfig())
        b_cfg, b_feats, b_target = tune(traces, EngineConfig())
        assert a_cfg == b_cfg
        assert a_feats == b_feats
        assert a_target == b_target

    def test_target_recorded_in_config(self, rng):
        traces = [build_trace(rng.lognormal(0, 1, 40), rng.lognormal(0, 0.5, 40))]
        cfg, _, target = tune(traces, EngineConfig())
        assert cfg.gamma_target == target
        assert cfg.gamma_base == target
