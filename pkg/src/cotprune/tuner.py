"""Corpus-level parameter tuning: features -> target ratio -> updated config.

The estimator follows one rule: the more dispersed the corpus entropy is
relative to its median, the more conservative (higher) the target retention
ratio. The update recenters the soft rate bounds on the target while
preserving their half-width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .policy import ConfigError, EngineConfig
from .trace import ContractError, Trace

__all__ = [
    "DatasetFeatures",
    "TunerError",
    "extract_features",
    "estimate_target_ratio",
    "update_params",
    "tune",
]

_EPS = 1e-9


class TunerError(ValueError):
    """A parameter update produced bounds violating a config invariant."""


@dataclass(frozen=True)
class DatasetFeatures:
    """Corpus statistics driving the target-ratio estimate.

    Lengths count all tokens; entropy statistics pool valid tokens only;
    h_max_mean averages each trace's maximum entropy; gogi_tail_ratio is the
    share of valid tokens strictly above the corpus 90th-percentile score
    (reported, unused by the estimator).
    """

    mean_len: float
    len_std: float
    h_mean: float
    h_median: float
    h_std: float
    h_max_mean: float
    gogi_tail_ratio: float

    def __post_init__(self) -> None:
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ContractError(f"DatasetFeatures.{name} must be finite")
        if self.h_std < 0:
            raise ContractError("h_std must be >= 0")
        if not (0.0 <= self.gogi_tail_ratio <= 0.5):
            raise ContractError(
                f"gogi_tail_ratio must be in [0, 0.5], got {self.gogi_tail_ratio}"
            )

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def extract_features(traces: Sequence[Trace]) -> DatasetFeatures:
    """Exact sample statistics over a corpus (population std throughout)."""
    if len(traces) == 0:
        raise ContractError("cannot extract features from an empty corpus")
    lengths = np.array([len(tr) for tr in traces], dtype=np.float64)
    pooled_h: list[np.ndarray] = []
    pooled_g: list[np.ndarray] = []
    per_trace_max: list[float] = []
    for tr in traces:
        valid = tr.valid_array()
        if not valid.any():
            continue
        h = tr.entropy_array()[valid]
        pooled_h.append(h)
        pooled_g.append(tr.gogi_array()[valid])
        per_trace_max.append(float(h.max()))
    if not pooled_h:
        raise ContractError("corpus has no valid tokens to summarize")
    h_all = np.concatenate(pooled_h)
    g_all = np.concatenate(pooled_g)
    q90 = np.percentile(g_all, 90)
    return DatasetFeatures(
        mean_len=float(lengths.mean()),
        len_std=float(lengths.std()),
        h_mean=float(h_all.mean()),
        h_median=float(np.median(h_all)),
        h_std=float(h_all.std()),
        h_max_mean=float(np.mean(per_trace_max)),
        gogi_tail_ratio=float(np.mean(g_all > q90)),
    )


def estimate_target_ratio(features: DatasetFeatures, cfg: EngineConfig) -> float:
    """Target global retention ratio, monotone non-decreasing in the entropy
    dispersion ratio h_std/h_median and confined to [gamma_min, gamma_max].

    Zero dispersion pulls the target a quarter of the way from gamma_base
    toward gamma_min; dispersion at or above the median pushes it halfway
    from gamma_base toward gamma_max.
    """
    r = min(features.h_std / max(features.h_median, _EPS), 1.0)
    target = (
        cfg.gamma_base
        + 0.5 * (cfg.gamma_max - cfg.gamma_base) * r
        - 0.25 * (cfg.gamma_base - cfg.gamma_min) * (1.0 - r)
    )
    return min(max(target, cfg.gamma_min), cfg.gamma_max)


def update_params(cfg: EngineConfig, gamma_target: float) -> EngineConfig:
    """Recenters the config on a target ratio.

    gamma_base becomes the target, the soft bounds are recentered to
    target +/- the original half-width and clipped to the hard bounds, and
    the result is re-validated. Raises TunerError naming the violated bound
    when clipping produces an inconsistent config.
    """
    if not (0.0 < gamma_target < 1.0):
        raise ContractError(f"gamma_target must be in (0, 1), got {gamma_target}")
    half_width = (cfg.gamma_max - cfg.gamma_min) / 2.0
    new_min = min(max(gamma_target - half_width, cfg.gamma_abs_min), cfg.gamma_abs_max)
    new_max = min(max(gamma_target + half_width, cfg.gamma_abs_min), cfg.gamma_abs_max)
    try:
        return cfg.with_updates(
            gamma_min=new_min,
            gamma_max=new_max,
            gamma_base=gamma_target,
            gamma_target=gamma_target,
        )
    except ConfigError as exc:
        raise TunerError(f"adjusted bounds are invalid: {exc}") from exc


def tune(
    traces: Sequence[Trace], cfg: EngineConfig
) -> tuple[EngineConfig, DatasetFeatures, float]:
    """Full pipeline: extract features, estimate the target, update the config.

    Deterministic: the same corpus and starting config always produce the
    same (config, features, target) triple.
    """
    features = extract_features(traces)
    target = estimate_target_ratio(features, cfg)
    return update_params(cfg, target), features, target
