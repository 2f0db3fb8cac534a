"""Batch front end: compress, tune, stats, surface, layers, ablate.

Runs are driven by a RunManifest and are fully deterministic: identical
manifests produce byte-identical artifacts. Per-trace failures are collected
rather than fatal (exit 4, successes retained); missing inputs exit 2 and
config violations exit 3.
"""

from __future__ import annotations

import argparse
import glob
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .analysis import (
    cap_preservation,
    combine_preservation,
    correlation_matrix,
    decision_surface,
    layer_contribution_aggregate,
    retention_by_category,
    trace_summary_features,
)
from .mapping import EntropyStats, estimate_global_stats
from .policy import ConfigError, EngineConfig
from .pruner import PruneOutcome, PruneVariant, ablation_prune, prune
from .trace import (
    ContractError,
    KeepMask,
    Trace,
    TraceParseError,
    TraceValidationError,
    parse_trace,
    write_compressed,
)
from .tuner import tune

__all__ = ["RunManifest", "run", "main"]

EXIT_OK = 0
EXIT_NO_INPUT = 2
EXIT_BAD_CONFIG = 3
EXIT_PARTIAL = 4

WORKERS_ENV = "COTPRUNE_WORKERS"

_CONFIG_FLAGS = (
    "gamma_min",
    "gamma_max",
    "gamma_base",
    "gamma_abs_min",
    "gamma_abs_max",
    "entropy_delta",
    "s_gamma",
    "n_min",
    "n_max",
    "window",
    "s_n",
    "theta_critical",
    "delta_high",
    "delta_low",
    "stability_run",
    "n_shrink",
    "gamma_target",
    "mapping_mode",
    "ignore_space_tokens",
)


@dataclass(frozen=True)
class RunManifest:
    """Everything one reproducible batch run depends on."""

    command: str
    input_glob: str = ""
    output_dir: str = ""
    config_path: Optional[str] = None
    variant: PruneVariant = PruneVariant.FULL
    seed: int = 0
    workers: Optional[int] = None
    config_overrides: dict = field(default_factory=dict)
    h_median: Optional[float] = None
    h_std: Optional[float] = None
    masks_dir: Optional[str] = None
    out_config: Optional[str] = None
    h_grid: str = "0:6:25"
    q_grid: str = "0:1:21"


def _resolve_inputs(pattern: str) -> list[Path]:
    p = Path(pattern)
    if p.is_dir():
        return sorted(p.glob("*.jsonl"))
    if glob.has_magic(pattern):
        return sorted(Path(m) for m in glob.glob(pattern))
    return [p] if p.is_file() else []


def _workers(manifest: RunManifest) -> int:
    if manifest.workers is not None:
        return max(1, manifest.workers)
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else 1


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _load_config(manifest: RunManifest) -> tuple[EngineConfig, Optional[EntropyStats]]:
    stats: Optional[EntropyStats] = None
    if manifest.config_path:
        with open(manifest.config_path, "r", encoding="utf-8") as fh:
            cfg, stats = EngineConfig.load(fh)
    else:
        cfg = EngineConfig()
    if manifest.config_overrides:
        cfg = EngineConfig.from_dict({**cfg.to_dict(), **manifest.config_overrides})
    if manifest.h_median is not None and manifest.h_std is not None:
        stats = EntropyStats(manifest.h_median, manifest.h_std)
    return cfg, stats


def _parse_all(
    paths: Sequence[Path],
) -> tuple[list[tuple[Path, Trace]], list[dict]]:
    parsed: list[tuple[Path, Trace]] = []
    errors: list[dict] = []
    for path in paths:
        try:
            with open(path, "rb") as fh:
                parsed.append((path, parse_trace(fh)))
        except (TraceParseError, TraceValidationError, OSError) as exc:
            errors.append({"file": str(path), "error": str(exc)})
    return parsed, errors


def _resolve_stats(
    parsed: Sequence[tuple[Path, Trace]],
    file_stats: Optional[EntropyStats],
) -> tuple[dict[Path, EntropyStats], dict]:
    """Stats precedence: explicit flags/config file > per-trace meta (when
    every trace carries them) > pooled estimate over all valid tokens."""
    if file_stats is not None:
        info = {
            "source": "explicit",
            "h_median": file_stats.h_median,
            "h_std": file_stats.h_std,
        }
        return {path: file_stats for path, _ in parsed}, info
    if parsed and all(
        tr.meta_h_median is not None and tr.meta_h_std is not None
        for _, tr in parsed
    ):
        return (
            {
                path: EntropyStats(tr.meta_h_median, tr.meta_h_std)
                for path, tr in parsed
            },
            {"source": "trace-meta"},
        )
    pooled: list[float] = []
    for _, tr in parsed:
        valid = tr.valid_array()
        pooled.extend(tr.entropy_array()[valid].tolist())
    if not pooled:
        raise ContractError("no valid tokens in corpus; cannot estimate entropy stats")
    est = estimate_global_stats(pooled)
    info = {"source": "estimated", "h_median": est.h_median, "h_std": est.h_std}
    return {path: est for path, _ in parsed}, info


def _prune_one(
    trace: Trace,
    cfg: EngineConfig,
    stats: EntropyStats,
    variant: PruneVariant,
) -> PruneOutcome:
    if variant is PruneVariant.FULL:
        return prune(trace, cfg, stats)
    return ablation_prune(trace, cfg, stats, variant)


def _cmd_compress(manifest: RunManifest, cfg: EngineConfig, paths: list[Path],
                  file_stats: Optional[EntropyStats]) -> int:
    out_dir = Path(manifest.output_dir)
    parsed, errors = _parse_all(paths)
    rows: list[dict] = []
    if parsed:
        stats_by_path, stats_info = _resolve_stats(parsed, file_stats)
    else:
        stats_by_path, stats_info = {}, {"source": "none"}

    def _process(item: tuple[Path, Trace]) -> dict:
        path, trace = item
        outcome = _prune_one(trace, cfg, stats_by_path[path], manifest.variant)
        out_path = out_dir / path.name
        diag_path = out_dir / (path.stem + ".diag.json")
        buf = io.StringIO()
        diag = io.StringIO()
        write_compressed(trace, outcome.mask, buf, diag)
        _atomic_write(out_path, buf.getvalue())
        _atomic_write(diag_path, diag.getvalue())
        return {
            "file": path.name,
            "id": trace.id,
            "tokens": len(trace),
            "kept": outcome.compressed_len,
            "retention_ratio": outcome.retention_ratio,
            "valid_retention_ratio": outcome.valid_retention_ratio,
            "warning": outcome.warning,
        }

    with ThreadPoolExecutor(max_workers=_workers(manifest)) as pool:
        futures = {pool.submit(_process, item): item[0] for item in parsed}
        results: dict[str, dict] = {}
        for fut, path in futures.items():
            try:
                row = fut.result()
                results[row["file"]] = row
            except Exception as exc:  # noqa: BLE001 - collected, not fatal
                errors.append({"file": str(path), "error": str(exc)})
    rows = [results[name] for name in sorted(results)]

    total_tokens = sum(r["tokens"] for r in rows)
    total_kept = sum(r["kept"] for r in rows)
    summary = {
        "command": "compress",
        "variant": manifest.variant.value,
        "seed": manifest.seed,
        "config": cfg.to_dict(),
        "stats": stats_info,
        "traces": rows,
        "aggregate": {
            "traces": len(rows),
            "tokens": total_tokens,
            "kept": total_kept,
            "retention_ratio": (total_kept / total_tokens) if total_tokens else None,
        },
        "failures": len(errors),
    }
    _atomic_write(out_dir / "summary.json", _dump_json(summary))
    if errors:
        _atomic_write(out_dir / "errors.json", _dump_json({"errors": errors}))
        for err in errors:
            print(f"error: {err['file']}: {err['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_tune(manifest: RunManifest, cfg: EngineConfig, paths: list[Path]) -> int:
    parsed, errors = _parse_all(paths)
    if not parsed:
        for err in errors:
            print(f"error: {err['file']}: {err['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    traces = [tr for _, tr in parsed]
    tuned, features, target = tune(traces, cfg)
    pooled: list[float] = []
    for tr in traces:
        pooled.extend(tr.entropy_array()[tr.valid_array()].tolist())
    stats = estimate_global_stats(pooled) if pooled else None
    out_config = Path(manifest.out_config or (Path(manifest.output_dir) / "config.json"))
    buf = io.StringIO()
    tuned.save(buf, stats)
    _atomic_write(out_config, buf.getvalue())
    report = {
        "command": "tune",
        "seed": manifest.seed,
        "features": features.to_dict(),
        "gamma_target": target,
        "config_out": out_config.name,
        "traces": len(traces),
        "failures": len(errors),
    }
    _atomic_write(
        out_config.with_name(out_config.stem + ".features.json"), _dump_json(report)
    )
    print(f"gamma_target={target:.6f} -> {out_config}")
    if errors:
        for err in errors:
            print(f"error: {err['file']}: {err['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _mask_from_diag(obj: dict) -> KeepMask:
    def _floats(key: str) -> np.ndarray:
        return np.array(
            [math.nan if v is None else float(v) for v in obj[key]], dtype=np.float64
        )

    return KeepMask(
        keep=np.array([bool(v) for v in obj["keep"]], dtype=bool),
        consec=np.array(obj["consec"], dtype=np.int64),
        gamma=_floats("gamma"),
        tau=_floats("tau"),
        run_cap=_floats("run_cap"),
        override=np.array([bool(v) for v in obj["override"]], dtype=bool),
    )


def _cmd_stats(manifest: RunManifest, cfg: EngineConfig, paths: list[Path],
               file_stats: Optional[EntropyStats]) -> int:
    out_dir = Path(manifest.output_dir)
    parsed, errors = _parse_all(paths)
    if not parsed:
        for err in errors:
            print(f"error: {err['file']}: {err['error']}", file=sys.stderr)
        return EXIT_PARTIAL

    pooled: list[float] = []
    per_trace = []
    for path, tr in parsed:
        valid = tr.valid_array()
        pooled.extend(tr.entropy_array()[valid].tolist())
        per_trace.append(
            {"file": path.name, "id": tr.id, "tokens": len(tr),
             **trace_summary_features(tr)}
        )
    doc: dict[str, Any] = {
        "command": "stats",
        "seed": manifest.seed,
        "per_trace": per_trace,
    }
    if pooled:
        arr = np.asarray(pooled)
        est = estimate_global_stats(arr)
        doc["entropy"] = {
            "valid_tokens": int(arr.size),
            "h_median": est.h_median,
            "h_std": est.h_std,
            "h_mean": float(arr.mean()),
            "h_max": float(arr.max()),
        }
    doc["correlations"] = (
        correlation_matrix([tr for _, tr in parsed]) if len(parsed) >= 2 else None
    )

    if manifest.masks_dir:
        masks = []
        kept_traces = []
        for path, tr in parsed:
            diag_path = Path(manifest.masks_dir) / (path.stem + ".diag.json")
            try:
                with open(diag_path, "r", encoding="utf-8") as fh:
                    masks.append(_mask_from_diag(json.load(fh)))
                kept_traces.append(tr)
            except (OSError, json.JSONDecodeError, KeyError, ContractError) as exc:
                errors.append({"file": str(diag_path), "error": str(exc)})
        if kept_traces:
            doc["retention_by_category"] = retention_by_category(
                kept_traces, masks
            ).to_dict()

    if manifest.config_path or manifest.h_median is not None:
        stats_by_path, stats_info = _resolve_stats(parsed, file_stats)
        reports = [
            cap_preservation(tr, cfg, stats_by_path[path]) for path, tr in parsed
        ]
        doc["cap_preservation"] = combine_preservation(reports).to_dict()
        doc["stats"] = stats_info

    _atomic_write(out_dir / "stats.json", _dump_json(doc))
    if errors:
        _atomic_write(out_dir / "errors.json", _dump_json({"errors": errors}))
        for err in errors:
            print(f"error: {err['file']}: {err['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _parse_grid(spec: str) -> list[float]:
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid spec must be start:stop:count, got {spec!r}")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        return np.linspace(start, stop, count).tolist()
    return [float(v) for v in spec.split(",") if v.strip()]


def _cmd_surface(manifest: RunManifest, cfg: EngineConfig,
                 file_stats: Optional[EntropyStats]) -> int:
    out_dir = Path(manifest.output_dir)
    if file_stats is None:
        print(
            "error: surface needs entropy stats (--h-median/--h-std or a config "
            "file carrying them)",
            file=sys.stderr,
        )
        return EXIT_NO_INPUT
    surf = decision_surface(
        cfg, file_stats, _parse_grid(manifest.h_grid), _parse_grid(manifest.q_grid)
    )
    buf = io.StringIO()
    surf.write_csv(buf)
    _atomic_write(out_dir / "surface.csv", buf.getvalue())
    return EXIT_OK


def _cmd_layers(manifest: RunManifest, paths: list[Path]) -> int:
    out_dir = Path(manifest.output_dir)
    parsed, errors = _parse_all(paths)
    usable = [tr for _, tr in parsed if tr.layer_grads is not None]
    skipped = [
        {"file": str(path), "error": "no layer_grads"}
        for path, tr in parsed
        if tr.layer_grads is None
    ]
    errors.extend(skipped)
    if not usable:
        for err in errors:
            print(f"error: {err['file']}: {err['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    contrib = layer_contribution_aggregate(usable)
    doc = {
        "command": "layers",
        "seed": manifest.seed,
        "traces": len(usable),
        **contrib.to_dict(),
    }
    _atomic_write(out_dir / "layers.json", _dump_json(doc))
    if errors:
        _atomic_write(out_dir / "errors.json", _dump_json({"errors": errors}))
        for err in errors:
            print(f"error: {err['file']}: {err['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_ablate(manifest: RunManifest, cfg: EngineConfig, paths: list[Path],
                file_stats: Optional[EntropyStats]) -> int:
    out_dir = Path(manifest.output_dir)
    parsed, errors = _parse_all(paths)
    if not parsed:
        for err in errors:
            print(f"error: {err['file']}: {err['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    stats_by_path, stats_info = _resolve_stats(parsed, file_stats)
    rows = []
    for variant in PruneVariant:
        tokens = 0
        kept = 0
        valid_ratios = []
        for path, tr in parsed:
            outcome = _prune_one(tr, cfg, stats_by_path[path], variant)
            tokens += len(tr)
            kept += outcome.compressed_len
            valid_ratios.append(outcome.valid_retention_ratio)
        rows.append(
            {
                "variant": variant.value,
                "traces": len(parsed),
                "tokens": tokens,
                "kept": kept,
                "retention_ratio": kept / tokens if tokens else None,
                "mean_valid_retention_ratio": float(np.mean(valid_ratios)),
            }
        )
    doc = {
        "command": "ablate",
        "seed": manifest.seed,
        "config": cfg.to_dict(),
        "stats": stats_info,
        "variants": rows,
        "failures": len(errors),
    }
    _atomic_write(out_dir / "ablate.json", _dump_json(doc))
    csv_lines = ["variant,traces,tokens,kept,retention_ratio,mean_valid_retention_ratio"]
    for r in rows:
        csv_lines.append(
            f"{r['variant']},{r['traces']},{r['tokens']},{r['kept']},"
            f"{r['retention_ratio']!r},{r['mean_valid_retention_ratio']!r}"
        )
    _atomic_write(out_dir / "ablate.csv", "\n".join(csv_lines) + "\n")
    if errors:
        _atomic_write(out_dir / "errors.json", _dump_json({"errors": errors}))
        for err in errors:
            print(f"error: {err['file']}: {err['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def run(manifest: RunManifest) -> int:
    """Execute one manifest; returns the process exit status."""
    try:
        cfg, file_stats = _load_config(manifest)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_NO_INPUT

    needs_inputs = manifest.command in ("compress", "tune", "stats", "layers", "ablate")
    paths: list[Path] = []
    if needs_inputs:
        paths = _resolve_inputs(manifest.input_glob)
        if not paths:
            print(f"error: no inputs match {manifest.input_glob!r}", file=sys.stderr)
            return EXIT_NO_INPUT

    try:
        if manifest.command == "compress":
            return _cmd_compress(manifest, cfg, paths, file_stats)
        if manifest.command == "tune":
            return _cmd_tune(manifest, cfg, paths)
        if manifest.command == "stats":
            return _cmd_stats(manifest, cfg, paths, file_stats)
        if manifest.command == "surface":
            return _cmd_surface(manifest, cfg, file_stats)
        if manifest.command == "layers":
            return _cmd_layers(manifest, paths)
        if manifest.command == "ablate":
            return _cmd_ablate(manifest, cfg, paths, file_stats)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    raise ValueError(f"unknown command {manifest.command!r}")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for name in _CONFIG_FLAGS:
        flag = "--" + name.replace("_", "-")
        if name in ("n_min", "n_max", "window", "stability_run"):
            group.add_argument(flag, type=int, default=None)
        elif name == "mapping_mode":
            group.add_argument(flag, type=str, default=None,
                               choices=["auto", "sigmoid", "tanh", "gaussian", "piecewise"])
        elif name == "ignore_space_tokens":
            group.add_argument(flag, type=lambda s: s.lower() in ("1", "true", "yes"),
                               default=None, metavar="BOOL")
        else:
            group.add_argument(flag, type=float, default=None)


def _collect_overrides(args: argparse.Namespace) -> dict:
    return {
        name: getattr(args, name)
        for name in _CONFIG_FLAGS
        if getattr(args, name, None) is not None
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotprune",
        description="Compress scored reasoning traces and analyze the results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, inputs: bool = True, out: bool = True) -> None:
        if inputs:
            p.add_argument("--in", dest="input_glob", required=True,
                           help="input trace file, directory, or glob")
        if out:
            p.add_argument("--out", dest="output_dir", required=True)
        p.add_argument("--config", dest="config_path", default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=None,
                       help=f"worker pool size (or ${WORKERS_ENV})")
        p.add_argument("--h-median", dest="h_median", type=float, default=None)
        p.add_argument("--h-std", dest="h_std", type=float, default=None)
        _add_config_flags(p)

    p = sub.add_parser("compress", help="prune traces into compressed JSONL")
    common(p)
    p.add_argument("--variant", type=PruneVariant, default=PruneVariant.FULL,
                   choices=list(PruneVariant))

    p = sub.add_parser("tune", help="fit the config to a corpus")
    common(p, out=False)
    p.add_argument("--out-config", dest="out_config", required=True)

    p = sub.add_parser("stats", help="corpus statistics and retention reports")
    common(p)
    p.add_argument("--masks", dest="masks_dir", default=None,
                   help="directory of .diag.json sidecars from a compress run")

    p = sub.add_parser("surface", help="decision grid over entropy x quantile")
    common(p, inputs=False)
    p.add_argument("--h-grid", dest="h_grid", default="0:6:25")
    p.add_argument("--q-grid", dest="q_grid", default="0:1:21")

    p = sub.add_parser("layers", help="aggregate per-layer gradient norms")
    common(p)

    p = sub.add_parser("ablate", help="compare all pruning variants")
    common(p)
    return parser


def manifest_from_args(args: argparse.Namespace) -> RunManifest:
    return RunManifest(
        command=args.command,
        input_glob=getattr(args, "input_glob", ""),
        output_dir=getattr(args, "output_dir", ""),
        config_path=args.config_path,
        variant=getattr(args, "variant", PruneVariant.FULL),
        seed=args.seed,
        workers=args.workers,
        config_overrides=_collect_overrides(args),
        h_median=args.h_median,
        h_std=args.h_std,
        masks_dir=getattr(args, "masks_dir", None),
        out_config=getattr(args, "out_config", None),
        h_grid=getattr(args, "h_grid", "0:6:25"),
        q_grid=getattr(args, "q_grid", "0:1:21"),
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return run(manifest_from_args(args))


if __name__ == "__main__":
    sys.exit(main())
