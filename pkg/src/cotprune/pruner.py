"""The compression loop: threshold + run-cap + override, plus baselines.

Each valid token is kept when its importance clears the local quantile
threshold or when pruning it would exceed the consecutive-prune cap, except
that tokens far below the threshold (under theta_critical times it) are
pruned unconditionally. Invalid tokens are always kept and reset the prune
counter. Ablation variants disable the adaptive rate, the cap, or both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .mapping import EntropyStats, MappingMode, map_entropy_array, resolve_auto
from .policy import (
    EngineConfig,
    adaptive_n_array,
    quantile_from_sorted,
    refine_n,
    retention_rate_array,
    windowed_means,
)
from .trace import ContractError, KeepMask, TokenRecord, Trace

__all__ = [
    "PruneVariant",
    "PruneOutcome",
    "prune",
    "static_prune",
    "ablation_prune",
    "effective_valid",
]

WeightFn = Callable[[float, TokenRecord], float]


class PruneVariant(Enum):
    """Ablation switches: adaptive rate on/off x consecutive-prune cap on/off."""

    FULL = "full"
    NO_RUN_CAP = "no-run-cap"  # cap disabled (sentinel = trace length + 1)
    FIXED_RATE = "fixed-rate"  # retention rate frozen at gamma_base, cap active
    STATIC = "static"  # frozen rate, no cap: plain quantile cut


@dataclass(frozen=True)
class PruneOutcome:
    """A keep mask plus its summary ratios."""

    mask: KeepMask
    compressed_len: int
    retention_ratio: float
    valid_retention_ratio: float
    warning: Optional[str] = None


def effective_valid(trace: Trace, cfg: EngineConfig) -> np.ndarray:
    """Token validity as the engine sees it: the record's flag, and (by
    default) whitespace-only tokens forced invalid regardless of the flag."""
    flags = trace.valid_array()
    if cfg.ignore_space_tokens:
        space = np.array(
            [t.token_text.strip() == "" for t in trace.tokens], dtype=bool
        )
        flags = flags & ~space
    return flags


def _all_keep_outcome(trace: Trace, warning: str) -> PruneOutcome:
    m = len(trace)
    return PruneOutcome(
        mask=KeepMask.from_keep(np.ones(m, dtype=bool)),
        compressed_len=m,
        retention_ratio=1.0,
        valid_retention_ratio=1.0,
        warning=warning,
    )


def _outcome(trace: Trace, mask: KeepMask, valid: np.ndarray) -> PruneOutcome:
    kept = int(np.count_nonzero(mask.keep))
    n_valid = int(np.count_nonzero(valid))
    kept_valid = int(np.count_nonzero(mask.keep & valid))
    return PruneOutcome(
        mask=mask,
        compressed_len=kept,
        retention_ratio=kept / len(trace),
        valid_retention_ratio=(kept_valid / n_valid) if n_valid else 1.0,
    )


def _run(
    trace: Trace,
    cfg: EngineConfig,
    stats: EntropyStats,
    *,
    rate_adaptive: bool,
    cap_active: bool,
    weight_fn: Optional[WeightFn],
) -> PruneOutcome:
    m = len(trace)
    if m == 0:
        raise ContractError("cannot prune an empty trace")
    valid = effective_valid(trace, cfg)
    gogi = trace.gogi_array()
    if weight_fn is not None:
        gogi = np.array(
            [weight_fn(g, tok) for g, tok in zip(gogi, trace.tokens)],
            dtype=np.float64,
        )
    if not valid.any():
        return _all_keep_outcome(trace, "no valid tokens; kept everything")

    entropy = trace.entropy_array()
    sorted_scores = np.sort(gogi[valid])
    mode = cfg.mapping_mode
    if mode is MappingMode.AUTO:
        mode = resolve_auto(stats)

    hhat = map_entropy_array(entropy, stats, mode, cfg.s_gamma)
    if rate_adaptive:
        gamma_vec = retention_rate_array(hhat, cfg)
    else:
        base = min(max(cfg.gamma_base, cfg.gamma_abs_min), cfg.gamma_abs_max)
        gamma_vec = np.full(m, base)
    tau_vec = quantile_from_sorted(sorted_scores, 1.0 - gamma_vec)

    cap_sentinel = m + 1
    if cap_active:
        hbar_hat = map_entropy_array(
            windowed_means(entropy, cfg.window), stats, mode, cfg.s_n
        )
        n_base = adaptive_n_array(hbar_hat, cfg).tolist()
    else:
        n_base = None

    keep = np.zeros(m, dtype=bool)
    consec = np.zeros(m, dtype=np.int64)
    gamma_out = np.full(m, np.nan)
    tau_out = np.full(m, np.nan)
    cap_out = np.full(m, np.nan)
    override = np.zeros(m, dtype=bool)

    # The per-position loop carries two pieces of state: the consecutive-prune
    # counter and the cap refinement's stability counter / previous hhat.
    valid_list = valid.tolist()
    gogi_list = gogi.tolist()
    hhat_list = hhat.tolist()
    gamma_list = np.asarray(gamma_vec).tolist()
    tau_list = np.asarray(tau_vec).tolist()
    theta = cfg.theta_critical

    c_prev = 0
    stable = 0
    hhat_prev: Optional[float] = None
    for t in range(m):
        if not valid_list[t]:
            keep[t] = True
            c_prev = 0
            continue
        if cap_active:
            now = hhat_list[t]
            prev = now if hhat_prev is None else hhat_prev
            n_eff, stable = refine_n(n_base[t], now, prev, stable, cfg)
            hhat_prev = now
        else:
            n_eff = cap_sentinel
        g = gogi_list[t]
        tau = tau_list[t]
        gamma_out[t] = gamma_list[t]
        tau_out[t] = tau
        cap_out[t] = n_eff
        if g < theta * tau:
            override[t] = True
            c_prev += 1
            consec[t] = c_prev
        elif g >= tau or c_prev + 1 >= n_eff:
            keep[t] = True
            c_prev = 0
        else:
            c_prev += 1
            consec[t] = c_prev

    mask = KeepMask(
        keep=keep,
        consec=consec,
        gamma=gamma_out,
        tau=tau_out,
        run_cap=cap_out,
        override=override,
    )
    return _outcome(trace, mask, valid)


def prune(
    trace: Trace,
    cfg: EngineConfig,
    stats: EntropyStats,
    weight_fn: Optional[WeightFn] = None,
) -> PruneOutcome:
    """Run the full adaptive method on one trace.

    ``weight_fn`` optionally reweights importance scores per token before
    thresholding (identity when None; kept as a hook for category weighting).
    A trace with zero valid tokens is returned fully kept, with a warning.
    """
    return _run(
        trace, cfg, stats, rate_adaptive=True, cap_active=True, weight_fn=weight_fn
    )


def ablation_prune(
    trace: Trace,
    cfg: EngineConfig,
    stats: EntropyStats,
    variant: PruneVariant,
    weight_fn: Optional[WeightFn] = None,
) -> PruneOutcome:
    """Run one ablation variant (see :class:`PruneVariant`)."""
    return _run(
        trace,
        cfg,
        stats,
        rate_adaptive=variant in (PruneVariant.FULL, PruneVariant.NO_RUN_CAP),
        cap_active=variant in (PruneVariant.FULL, PruneVariant.FIXED_RATE),
        weight_fn=weight_fn,
    )


def static_prune(trace: Trace, gamma: float) -> PruneOutcome:
    """Keep the ceil(gamma * n_valid) highest-importance valid tokens (ties
    broken toward lower index) and every invalid token."""
    if not (0.0 < gamma <= 1.0):
        raise ContractError(f"gamma must be in (0, 1], got {gamma}")
    m = len(trace)
    if m == 0:
        raise ContractError("cannot prune an empty trace")
    valid = trace.valid_array()
    n_valid = int(np.count_nonzero(valid))
    if n_valid == 0:
        return _all_keep_outcome(trace, "no valid tokens; kept everything")
    k = math.ceil(gamma * n_valid)
    gogi = trace.gogi_array()
    valid_idx = np.flatnonzero(valid)
    order = valid_idx[np.argsort(-gogi[valid_idx], kind="stable")]
    keep = ~valid
    keep[order[:k]] = True
    mask = KeepMask.from_keep(keep)
    return _outcome(trace, mask, valid)
