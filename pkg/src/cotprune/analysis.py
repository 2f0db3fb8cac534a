"""Diagnostics over traces and masks: retention tables, cap preservation,
rank correlations, layer contribution aggregation, decision surfaces."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import IO, Optional, Sequence, Union

import numpy as np

from .mapping import EntropyStats, MappingMode, map_entropy, resolve_auto
from .policy import EngineConfig, retention_rate
from .pruner import PruneVariant, ablation_prune, effective_valid, prune
from .trace import ContractError, FunctionalCategory, KeepMask, Trace

__all__ = [
    "CategoryRetention",
    "RetentionReport",
    "CategoryPreservation",
    "CapPreservationReport",
    "LayerContribution",
    "DecisionSurface",
    "UndefinedCorrelationError",
    "retention_by_category",
    "cap_preservation",
    "combine_preservation",
    "spearman",
    "rank_average",
    "layer_contribution_aggregate",
    "decision_surface",
    "trace_summary_features",
    "correlation_matrix",
]


class UndefinedCorrelationError(ValueError):
    """Correlation is undefined: fewer than two points or a constant input."""


# --- retention by functional category ---------------------------------------


@dataclass(frozen=True)
class CategoryRetention:
    total: int
    kept: int

    @property
    def rate(self) -> float:
        return self.kept / self.total if self.total else 0.0


@dataclass(frozen=True)
class RetentionReport:
    per_category: dict[FunctionalCategory, CategoryRetention]
    overall_total: int
    overall_kept: int

    @property
    def overall_ratio(self) -> float:
        return self.overall_kept / self.overall_total if self.overall_total else 0.0

    def to_dict(self) -> dict:
        return {
            "per_category": {
                cat.value: {"total": r.total, "kept": r.kept, "rate": r.rate}
                for cat, r in self.per_category.items()
            },
            "overall": {
                "total": self.overall_total,
                "kept": self.overall_kept,
                "rate": self.overall_ratio,
            },
        }


def retention_by_category(
    traces: Sequence[Trace], masks: Sequence[KeepMask]
) -> RetentionReport:
    """Exact kept/total counts per functional category over paired
    (trace, mask) sequences."""
    if len(traces) != len(masks):
        raise ContractError(
            f"{len(traces)} traces paired with {len(masks)} masks"
        )
    totals = {cat: 0 for cat in FunctionalCategory}
    kept = {cat: 0 for cat in FunctionalCategory}
    for trace, mask in zip(traces, masks):
        if len(mask) != len(trace):
            raise ContractError(
                f"trace {trace.id!r}: mask length {len(mask)} != {len(trace)}"
            )
        for tok, k in zip(trace.tokens, mask.keep):
            totals[tok.category] += 1
            if k:
                kept[tok.category] += 1
    return RetentionReport(
        per_category={
            cat: CategoryRetention(totals[cat], kept[cat])
            for cat in FunctionalCategory
        },
        overall_total=sum(totals.values()),
        overall_kept=sum(kept.values()),
    )


# --- preservation by the consecutive-prune cap -------------------------------


@dataclass(frozen=True)
class CategoryPreservation:
    initially_pruned: int
    preserved_by_cap: int

    @property
    def rate(self) -> float:
        return (
            self.preserved_by_cap / self.initially_pruned
            if self.initially_pruned
            else 0.0
        )


@dataclass(frozen=True)
class CapPreservationReport:
    per_category: dict[FunctionalCategory, CategoryPreservation]

    @property
    def aggregate(self) -> CategoryPreservation:
        return CategoryPreservation(
            initially_pruned=sum(
                p.initially_pruned for p in self.per_category.values()
            ),
            preserved_by_cap=sum(
                p.preserved_by_cap for p in self.per_category.values()
            ),
        )

    def to_dict(self) -> dict:
        agg = self.aggregate
        return {
            "per_category": {
                cat.value: {
                    "initially_pruned": p.initially_pruned,
                    "preserved_by_cap": p.preserved_by_cap,
                    "rate": p.rate,
                }
                for cat, p in self.per_category.items()
            },
            "aggregate": {
                "initially_pruned": agg.initially_pruned,
                "preserved_by_cap": agg.preserved_by_cap,
                "rate": agg.rate,
            },
        }


def cap_preservation(
    trace: Trace, cfg: EngineConfig, stats: EntropyStats
) -> CapPreservationReport:
    """How many below-threshold tokens the consecutive-prune cap rescued.

    Runs the full method and the cap-disabled ablation; a valid token is
    "initially pruned" when its score falls below the local threshold (it is
    pruned by the cap-disabled run), and "preserved" when the full mask kept
    it anyway. Override-pruned tokens count as initially pruned and are never
    preserved.
    """
    full = prune(trace, cfg, stats)
    uncapped = ablation_prune(trace, cfg, stats, PruneVariant.NO_RUN_CAP)
    valid = effective_valid(trace, cfg)
    initially = {cat: 0 for cat in FunctionalCategory}
    preserved = {cat: 0 for cat in FunctionalCategory}
    for t, tok in enumerate(trace.tokens):
        if not valid[t] or uncapped.mask.keep[t]:
            continue
        initially[tok.category] += 1
        if full.mask.keep[t]:
            preserved[tok.category] += 1
    return CapPreservationReport(
        per_category={
            cat: CategoryPreservation(initially[cat], preserved[cat])
            for cat in FunctionalCategory
        }
    )


def combine_preservation(
    reports: Sequence[CapPreservationReport],
) -> CapPreservationReport:
    """Sum per-category counts across per-trace reports."""
    initially = {cat: 0 for cat in FunctionalCategory}
    preserved = {cat: 0 for cat in FunctionalCategory}
    for rep in reports:
        for cat, p in rep.per_category.items():
            initially[cat] += p.initially_pruned
            preserved[cat] += p.preserved_by_cap
    return CapPreservationReport(
        per_category={
            cat: CategoryPreservation(initially[cat], preserved[cat])
            for cat in FunctionalCategory
        }
    )


# --- rank correlation ---------------------------------------------------------


def rank_average(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    arr = np.asarray(values, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.size, dtype=np.float64)
    i = 0
    while i < arr.size:
        j = i
        while j + 1 < arr.size and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties, in [-1, 1].

    Raises UndefinedCorrelationError for sequences shorter than two or with a
    constant side.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size != y.size:
        raise ContractError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise UndefinedCorrelationError("need at least two points")
    rx = rank_average(x)
    ry = rank_average(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        raise UndefinedCorrelationError("correlation undefined for constant input")
    return float(dx @ dy) / denom


# --- layer contribution aggregation ------------------------------------------


@dataclass(frozen=True)
class LayerContribution:
    """Mean per-layer gradient L1 norm over valid positions, plus a copy
    normalized to max 1 (left untouched when everything is zero)."""

    per_layer: np.ndarray
    positions: int

    @property
    def normalized(self) -> np.ndarray:
        peak = self.per_layer.max() if self.per_layer.size else 0.0
        if peak <= 0.0:
            return self.per_layer.copy()
        return self.per_layer / peak

    def to_dict(self) -> dict:
        return {
            "per_layer": [float(v) for v in self.per_layer],
            "normalized": [float(v) for v in self.normalized],
            "positions": self.positions,
        }


def layer_contribution_aggregate(traces: Sequence[Trace]) -> LayerContribution:
    """Pool per-layer norms over the valid positions of every trace."""
    sums: Optional[np.ndarray] = None
    count = 0
    for tr in traces:
        if tr.layer_grads is None:
            raise ContractError(f"trace {tr.id!r} has no layer_grads")
        valid = tr.valid_array()
        rows = tr.layer_grads[valid]
        if sums is None:
            sums = np.zeros(tr.layer_grads.shape[1])
        elif tr.layer_grads.shape[1] != sums.size:
            raise ContractError(
                f"trace {tr.id!r} has {tr.layer_grads.shape[1]} layers, "
                f"expected {sums.size}"
            )
        sums += rows.sum(axis=0)
        count += rows.shape[0]
    if sums is None:
        raise ContractError("no traces supplied")
    per_layer = sums / count if count else sums
    return LayerContribution(per_layer=per_layer, positions=count)


# --- decision surface ----------------------------------------------------------


@dataclass(frozen=True)
class DecisionSurface:
    """Keep/prune decision grid over (entropy, score-quantile) cells.

    ``gamma`` holds the retention rate per entropy column; ``keep`` is a
    [quantile x entropy] 0/1 matrix marking whether a token at that score
    quantile clears the threshold (it does iff quantile >= 1 - gamma).
    """

    h_grid: np.ndarray
    q_grid: np.ndarray
    gamma: np.ndarray
    keep: np.ndarray

    def write_csv(self, stream: Union[IO[str], IO[bytes]]) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["entropy", "score_quantile", "gamma", "keep"])
        for qi, q in enumerate(self.q_grid):
            for hi, h in enumerate(self.h_grid):
                writer.writerow(
                    [
                        repr(float(h)),
                        repr(float(q)),
                        repr(float(self.gamma[hi])),
                        int(self.keep[qi, hi]),
                    ]
                )
        text = buf.getvalue()
        try:
            stream.write(text)  # type: ignore[arg-type]
        except TypeError:
            stream.write(text.encode("utf-8"))  # type: ignore[arg-type]


def decision_surface(
    cfg: EngineConfig,
    stats: EntropyStats,
    h_grid: Sequence[float],
    q_grid: Sequence[float],
) -> DecisionSurface:
    """Evaluate the joint retention policy on an (entropy x quantile) grid."""
    h_arr = np.asarray(h_grid, dtype=np.float64)
    q_arr = np.asarray(q_grid, dtype=np.float64)
    if h_arr.size == 0 or q_arr.size == 0:
        raise ContractError("grids must be non-empty")
    mode = cfg.mapping_mode
    if mode is MappingMode.AUTO:
        mode = resolve_auto(stats)
    gamma = np.array(
        [retention_rate(map_entropy(h, stats, mode, cfg.s_gamma), cfg) for h in h_arr]
    )
    keep = (q_arr[:, None] >= (1.0 - gamma)[None, :]).astype(np.int64)
    return DecisionSurface(h_grid=h_arr, q_grid=q_arr, gamma=gamma, keep=keep)


# --- per-trace summary statistics and their correlation matrix -----------------

SUMMARY_FEATURES = (
    "gogi_mean",
    "gogi_max",
    "gogi_std",
    "gogi_sparsity",
    "entropy_mean",
    "entropy_max",
    "entropy_std",
)


def trace_summary_features(trace: Trace) -> dict[str, float]:
    """Per-trace score/entropy summary stats for cross-trace correlation.

    gogi_sparsity is the fraction of tokens scoring below 1% of the trace
    maximum (0 when the trace maximum is 0).
    """
    g = trace.gogi_array()
    h = trace.entropy_array()
    peak = float(g.max()) if g.size else 0.0
    sparsity = float(np.mean(g < 0.01 * peak)) if peak > 0 else 0.0
    return {
        "gogi_mean": float(g.mean()),
        "gogi_max": peak,
        "gogi_std": float(g.std()),
        "gogi_sparsity": sparsity,
        "entropy_mean": float(h.mean()),
        "entropy_max": float(h.max()),
        "entropy_std": float(h.std()),
    }


def correlation_matrix(traces: Sequence[Trace]) -> dict:
    """Pairwise rank correlations of per-trace summary features.

    Entries are None where the correlation is undefined (constant feature).
    """
    if len(traces) < 2:
        raise ContractError("need at least two traces for a correlation matrix")
    table = {name: [] for name in SUMMARY_FEATURES}
    for tr in traces:
        feats = trace_summary_features(tr)
        for name in SUMMARY_FEATURES:
            table[name].append(feats[name])
    matrix: dict[str, dict[str, Optional[float]]] = {}
    for a in SUMMARY_FEATURES:
        matrix[a] = {}
        for b in SUMMARY_FEATURES:
            try:
                matrix[a][b] = spearman(table[a], table[b])
            except UndefinedCorrelationError:
                matrix[a][b] = None
    return {"features": list(SUMMARY_FEATURES), "spearman": matrix}
