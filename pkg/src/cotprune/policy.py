"""Per-position pruning policy: retention rate, score threshold, run cap.

Three signals drive each keep/prune decision: the normalized pointwise
entropy sets a local retention rate, the retention rate picks a quantile
threshold over the trace's valid importance scores, and the windowed entropy
bounds how many consecutive tokens may be pruned (the run cap). Two small
feedback rules refine the cap: sharp entropy transitions shrink it, sustained
stability relaxes it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import IO, Optional, Sequence, Union

import numpy as np

from .mapping import EntropyStats, MappingMode
from .trace import ContractError

__all__ = [
    "EngineConfig",
    "ConfigError",
    "retention_rate",
    "retention_rate_array",
    "dynamic_threshold",
    "quantile_from_sorted",
    "windowed_entropy",
    "windowed_means",
    "adaptive_n",
    "adaptive_n_array",
    "refine_n",
]


class ConfigError(ValueError):
    """An EngineConfig field violates its documented bound."""


@dataclass(frozen=True)
class EngineConfig:
    """All pruning hyperparameters, defaulting to the reference operating point.

    gamma_* control the entropy-driven retention rate (soft bounds, base rate,
    hard clip floor/ceiling); n_* and window control the consecutive-prune
    cap; theta_critical is the extreme low-importance override factor;
    delta_high/delta_low/stability_run/n_shrink parametrize the cap
    refinements; gamma_target, when set, globally rescales the cap toward a
    target compression ratio. entropy_delta is accepted and serialized for
    compatibility but currently drives nothing.
    """

    gamma_min: float = 0.2
    gamma_max: float = 0.8
    gamma_base: float = 0.6
    gamma_abs_min: float = 0.05
    gamma_abs_max: float = 0.95
    entropy_delta: float = 0.3
    s_gamma: float = 1.8
    n_min: int = 1
    n_max: int = 9
    window: int = 9
    s_n: float = 1.8
    theta_critical: float = 0.4
    delta_high: float = 0.3
    delta_low: float = 0.05
    stability_run: int = 3
    n_shrink: float = 0.8
    gamma_target: Optional[float] = None
    mapping_mode: MappingMode = MappingMode.AUTO
    ignore_space_tokens: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma_min <= self.gamma_base <= self.gamma_max <= 1.0):
            raise ConfigError(
                "must satisfy 0 < gamma_min <= gamma_base <= gamma_max <= 1, got "
                f"gamma_min={self.gamma_min}, gamma_base={self.gamma_base}, "
                f"gamma_max={self.gamma_max}"
            )
        if self.gamma_abs_min > self.gamma_min:
            raise ConfigError(
                f"gamma_abs_min={self.gamma_abs_min} must be <= gamma_min={self.gamma_min}"
            )
        if not (self.gamma_max <= self.gamma_abs_max <= 1.0):
            raise ConfigError(
                f"gamma_abs_max={self.gamma_abs_max} must satisfy "
                f"gamma_max <= gamma_abs_max <= 1"
            )
        if not (1 <= self.n_min <= self.n_max):
            raise ConfigError(
                f"must satisfy 1 <= n_min <= n_max, got n_min={self.n_min}, "
                f"n_max={self.n_max}"
            )
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd and >= 1, got {self.window}")
        for name in ("s_gamma", "s_n", "n_shrink"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be > 0")
        if not (0.0 < self.theta_critical < 1.0):
            raise ConfigError(
                f"theta_critical must be in (0, 1), got {self.theta_critical}"
            )
        if not (0.0 < self.delta_low < self.delta_high):
            raise ConfigError(
                "must satisfy 0 < delta_low < delta_high, got "
                f"delta_low={self.delta_low}, delta_high={self.delta_high}"
            )
        if self.stability_run < 1:
            raise ConfigError("stability_run must be >= 1")
        if self.gamma_target is not None and not (0.0 < self.gamma_target <= 1.0):
            raise ConfigError(
                f"gamma_target must be in (0, 1], got {self.gamma_target}"
            )

    def with_updates(self, **kwargs) -> "EngineConfig":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mapping_mode"] = self.mapping_mode.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        known = {f for f in cls.__dataclass_fields__}  # noqa: C416
        kwargs = {k: v for k, v in data.items() if k in known}
        if "mapping_mode" in kwargs and not isinstance(
            kwargs["mapping_mode"], MappingMode
        ):
            try:
                kwargs["mapping_mode"] = MappingMode(kwargs["mapping_mode"])
            except ValueError as exc:
                raise ConfigError(
                    f"unknown mapping_mode {kwargs['mapping_mode']!r}"
                ) from exc
        return cls(**kwargs)

    def save(self, stream: Union[IO[str], IO[bytes]], stats: Optional[EntropyStats] = None) -> None:
        """Serialize as a flat JSON document, optionally with entropy stats."""
        doc = self.to_dict()
        if stats is not None:
            doc["h_median"] = stats.h_median
            doc["h_std"] = stats.h_std
        text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
        try:
            stream.write(text)  # type: ignore[arg-type]
        except TypeError:
            stream.write(text.encode("utf-8"))  # type: ignore[arg-type]

    @classmethod
    def load(cls, stream: Union[IO[str], IO[bytes], str, bytes]) -> tuple["EngineConfig", Optional[EntropyStats]]:
        """Parse a flat JSON config document; returns (config, stats or None)."""
        if isinstance(stream, (str, bytes)):
            raw = stream
        else:
            raw = stream.read()
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        data = json.loads(raw)
        if not isinstance(data, dict):
            raise ConfigError("config document must be a JSON object")
        stats = None
        if data.get("h_median") is not None and data.get("h_std") is not None:
            stats = EntropyStats(float(data["h_median"]), float(data["h_std"]))
        return cls.from_dict(data), stats


def retention_rate(h_hat: float, cfg: EngineConfig) -> float:
    """Local retention rate: linear in the normalized entropy, then hard-clipped."""
    g = cfg.gamma_min + (cfg.gamma_max - cfg.gamma_min) * h_hat
    return min(max(g, cfg.gamma_abs_min), cfg.gamma_abs_max)


def retention_rate_array(h_hat: np.ndarray, cfg: EngineConfig) -> np.ndarray:
    g = cfg.gamma_min + (cfg.gamma_max - cfg.gamma_min) * np.asarray(h_hat)
    return np.clip(g, cfg.gamma_abs_min, cfg.gamma_abs_max)


def quantile_from_sorted(
    sorted_scores: np.ndarray, q: Union[float, np.ndarray]
) -> Union[float, np.ndarray]:
    """Linear-interpolation quantile(s) over an ascending-sorted array.

    q in [0, 1]; position (n-1)*q is interpolated between neighboring order
    statistics (the usual "type 7" definition).
    """
    n = len(sorted_scores)
    if n == 0:
        raise ContractError("quantile of an empty score set")
    pos = (n - 1) * np.asarray(q, dtype=np.float64)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    vals = sorted_scores[lo] + frac * (sorted_scores[hi] - sorted_scores[lo])
    if np.ndim(q) == 0:
        return float(vals)
    return vals


def dynamic_threshold(gamma_t: float, valid_scores: Sequence[float]) -> float:
    """Score threshold keeping roughly a gamma_t fraction of the valid scores.

    The threshold is the (1 - gamma_t) quantile of the multiset, so for
    distinct scores the fraction at or above it is within 1/n of gamma_t.
    """
    scores = np.asarray(valid_scores, dtype=np.float64)
    if scores.size == 0:
        raise ContractError("dynamic_threshold needs a non-empty score multiset")
    if not (0.0 < gamma_t <= 1.0):
        raise ContractError(f"gamma_t must be in (0, 1], got {gamma_t}")
    return float(quantile_from_sorted(np.sort(scores), 1.0 - gamma_t))


def windowed_means(entropies: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with edge-value padding (exactly ``window``
    summands at every position, boundaries included)."""
    if window < 1 or window % 2 == 0:
        raise ContractError(f"window must be odd and >= 1, got {window}")
    arr = np.asarray(entropies, dtype=np.float64)
    if arr.size == 0:
        raise ContractError("windowed mean of an empty sequence")
    half = window // 2
    padded = np.concatenate(
        [np.repeat(arr[0], half), arr, np.repeat(arr[-1], half)]
    )
    csum = np.concatenate([[0.0], np.cumsum(padded)])
    return (csum[window:] - csum[:-window]) / window


def windowed_entropy(entropies: Sequence[float], t: int, window: int) -> float:
    """Windowed mean at one position (see :func:`windowed_means`)."""
    arr = np.asarray(entropies, dtype=np.float64)
    if not (0 <= t < arr.size):
        raise ContractError(f"position {t} outside sequence of length {arr.size}")
    return float(windowed_means(arr, window)[t])


def adaptive_n(hbar_hat: float, cfg: EngineConfig) -> int:
    """Consecutive-prune cap: high local entropy shrinks it, calm stretches
    allow longer prune runs. Rounded half-up, always within [n_min, n_max]."""
    raw = cfg.n_min + (cfg.n_max - cfg.n_min) * (1.0 - hbar_hat)
    clipped = min(max(raw, float(cfg.n_min)), float(cfg.n_max))
    return int(math.floor(clipped + 0.5))


def adaptive_n_array(hbar_hat: np.ndarray, cfg: EngineConfig) -> np.ndarray:
    raw = cfg.n_min + (cfg.n_max - cfg.n_min) * (1.0 - np.asarray(hbar_hat))
    clipped = np.clip(raw, float(cfg.n_min), float(cfg.n_max))
    return np.floor(clipped + 0.5).astype(np.int64)


def refine_n(
    n_t: int,
    hhat_now: float,
    hhat_prev: float,
    stable_count: int,
    cfg: EngineConfig,
) -> tuple[int, int]:
    """Adjust the cap from the normalized-entropy step and global target.

    A jump above delta_high shrinks the cap (times n_shrink, rounded half-up,
    floored at n_min) and resets the stability counter. Steps below delta_low
    grow the counter; once it reaches stability_run the cap relaxes by one.
    In between, the counter resets and the cap is unchanged. When a global
    gamma_target is set, the cap is then rescaled by gamma_base/gamma_target
    (aggressive targets lengthen allowed prune runs) and re-clipped.

    Returns (refined cap, updated stability counter).
    """
    delta = abs(hhat_now - hhat_prev)
    n = n_t
    if delta > cfg.delta_high:
        n = max(cfg.n_min, int(math.floor(n_t * cfg.n_shrink + 0.5)))
        stable_count = 0
    elif delta < cfg.delta_low:
        stable_count += 1
        if stable_count >= cfg.stability_run:
            n = min(cfg.n_max, n_t + 1)
    else:
        stable_count = 0
    if cfg.gamma_target is not None:
        scaled = int(math.floor(n * (cfg.gamma_base / cfg.gamma_target) + 0.5))
        n = min(max(scaled, cfg.n_min), cfg.n_max)
    return n, stable_count
