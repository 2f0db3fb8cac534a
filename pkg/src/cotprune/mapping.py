"""Entropy normalization: raw nats -> [0, 1] via global corpus statistics.

All maps are centered on the corpus entropy median and scaled by its standard
deviation, so a token at median uncertainty lands at 0.5 and the output range
is always [0, 1]. Four transform families are available plus an ``auto`` mode
that picks one from the dispersion of the corpus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .trace import ContractError

__all__ = [
    "EntropyStats",
    "MappingMode",
    "estimate_global_stats",
    "resolve_auto",
    "map_entropy",
    "map_entropy_array",
]

_EPS = 1e-9


class MappingMode(Enum):
    AUTO = "auto"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    GAUSSIAN = "gaussian"
    PIECEWISE = "piecewise"


@dataclass(frozen=True)
class EntropyStats:
    """Global entropy normalization parameters (median and std, in nats)."""

    h_median: float
    h_std: float

    def __post_init__(self) -> None:
        for name, v in (("h_median", self.h_median), ("h_std", self.h_std)):
            if not math.isfinite(v) or v < 0.0:
                raise ContractError(f"EntropyStats.{name} must be finite and >= 0")


def estimate_global_stats(entropies: Sequence[float]) -> EntropyStats:
    """Exact sample median (mean of middle two for even counts) and
    population standard deviation of an entropy sample."""
    arr = np.asarray(entropies, dtype=np.float64)
    if arr.size == 0:
        raise ContractError("cannot estimate entropy stats from an empty sample")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ContractError("entropies must be finite and >= 0")
    return EntropyStats(
        h_median=float(np.median(arr)),
        h_std=float(np.std(arr)),
    )


def resolve_auto(stats: EntropyStats) -> MappingMode:
    """Pick a concrete transform from the corpus dispersion.

    Degenerate corpora (zero spread) use the division-free piecewise map;
    near-constant corpora (spread under 5% of the median) the gaussian bump;
    heavy-tailed corpora (spread over twice the median) tanh; everything in
    between sigmoid. A zero median with nonzero spread also resolves to
    sigmoid.
    """
    if stats.h_std == 0.0:
        return MappingMode.PIECEWISE
    if stats.h_median == 0.0:
        return MappingMode.SIGMOID
    ratio = stats.h_std / stats.h_median
    if ratio < 0.05:
        return MappingMode.GAUSSIAN
    if ratio <= 2.0:
        return MappingMode.SIGMOID
    return MappingMode.TANH


def _piecewise(h: float, stats: EntropyStats) -> float:
    d = h - stats.h_median
    sign = 0.0 if d == 0.0 else math.copysign(1.0, d)
    stretch = min(abs(d) / max(stats.h_median, _EPS), 2.0)
    return min(max(0.5 + 0.25 * sign * stretch, 0.0), 1.0)


def map_entropy(
    h: float,
    stats: EntropyStats,
    mode: MappingMode = MappingMode.AUTO,
    scale: float = 1.0,
) -> float:
    """Normalize one entropy value to [0, 1].

    ``scale`` sharpens or flattens the response around the median (the config
    exposes separate scales for the rate map and the run-cap map). Modes that
    divide by the std fall back to the piecewise map when h_std is zero;
    that fallback is documented behavior, not an error. The gaussian mode is
    deliberately bell-shaped (peaks at the median); all other modes are
    monotone non-decreasing in h.
    """
    if scale <= 0.0:
        raise ContractError("scale must be > 0")
    if mode is MappingMode.AUTO:
        mode = resolve_auto(stats)
    if mode is MappingMode.PIECEWISE:
        return _piecewise(h, stats)
    if stats.h_std == 0.0:
        return _piecewise(h, stats)
    z = scale * (h - stats.h_median) / stats.h_std
    if mode is MappingMode.SIGMOID:
        # Guard exp overflow for extremely negative z; the limit is 0.
        if z < -700.0:
            return 0.0
        return 1.0 / (1.0 + math.exp(-z))
    if mode is MappingMode.TANH:
        return (math.tanh(z) + 1.0) / 2.0
    if mode is MappingMode.GAUSSIAN:
        return math.exp(-(z * z) / 2.0)
    raise ContractError(f"unknown mapping mode {mode!r}")


def map_entropy_array(
    h: Union[np.ndarray, Sequence[float]],
    stats: EntropyStats,
    mode: MappingMode = MappingMode.AUTO,
    scale: float = 1.0,
) -> np.ndarray:
    """Vectorized twin of :func:`map_entropy` (same formulas, numpy kernels)."""
    if scale <= 0.0:
        raise ContractError("scale must be > 0")
    arr = np.asarray(h, dtype=np.float64)
    if mode is MappingMode.AUTO:
        mode = resolve_auto(stats)
    if mode is MappingMode.PIECEWISE or stats.h_std == 0.0:
        d = arr - stats.h_median
        stretch = np.minimum(np.abs(d) / max(stats.h_median, _EPS), 2.0)
        return np.clip(0.5 + 0.25 * np.sign(d) * stretch, 0.0, 1.0)
    z = scale * (arr - stats.h_median) / stats.h_std
    if mode is MappingMode.SIGMOID:
        out = np.empty_like(z)
        lo = z < -700.0
        out[lo] = 0.0
        out[~lo] = 1.0 / (1.0 + np.exp(-z[~lo]))
        return out
    if mode is MappingMode.TANH:
        return (np.tanh(z) + 1.0) / 2.0
    if mode is MappingMode.GAUSSIAN:
        return np.exp(-(z * z) / 2.0)
    raise ContractError(f"unknown mapping mode {mode!r}")
