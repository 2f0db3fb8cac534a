"""Turn (problem, cot, answer) samples into scored trace JSONL files.

Each emitted file follows the trace schema consumed by the compression
engine: a meta line carrying id/answer and job-level entropy statistics,
then one token object per CoT token with its importance score, predictive
entropy, and validity flag (whitespace-only tokens are marked invalid).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .layers import layer_contributions
from .modeling import decoder_blocks, default_target_layer
from .scoring import answer_loss, cot_entropies, encode_sample, gogi_scores
from .tokenizers import Tokenizer

__all__ = ["Sample", "ExtractionJob", "extract_sample", "emit_traces"]


@dataclass(frozen=True)
class Sample:
    id: str
    problem: str
    cot: str
    answer: str


@dataclass
class ExtractionJob:
    """A batch of samples to score against one model."""

    samples: Sequence[Sample]
    output_dir: str
    model_id: str = ""
    target_layer: Optional[int] = None
    max_tokens: int = 1500
    with_layer_grads: bool = False

    def __post_init__(self) -> None:
        if not self.samples:
            raise ValueError("job has no samples")


@dataclass(frozen=True)
class ExtractedTrace:
    sample: Sample
    token_ids: list[int]
    token_texts: list[str]
    gogi: np.ndarray
    entropy: np.ndarray
    layer_grads: Optional[np.ndarray]
    loss: float


def extract_sample(
    model,
    tokenizer: Tokenizer,
    sample: Sample,
    target_layer: int,
    max_tokens: int = 1500,
    with_layer_grads: bool = False,
) -> ExtractedTrace:
    """Score one sample. Raises ValueError on over-length or non-finite
    gradients (the job loop records these as skips)."""
    encoded = encode_sample(tokenizer, sample.problem, sample.cot, sample.answer)
    if encoded.length > max_tokens:
        raise ValueError(
            f"sequence length {encoded.length} exceeds max_tokens {max_tokens}"
        )
    scores = gogi_scores(model, encoded, target_layer)
    ents = cot_entropies(model, encoded)
    layer_grads = None
    if with_layer_grads:
        contrib = layer_contributions(model, encoded.input_ids, encoded.cot_ids)
        rows = np.zeros((len(encoded.cot_ids), len(decoder_blocks(model))))
        if contrib is not None:
            start = contrib["cot_span"][0]
            for row, t in zip(
                contrib["per_position"],
                range(start, start + contrib["positions"]),
            ):
                rows[t - start] = row
        layer_grads = rows
    token_ids = encoded.cot_ids
    return ExtractedTrace(
        sample=sample,
        token_ids=token_ids,
        token_texts=[tokenizer.token_text(i) for i in token_ids],
        gogi=scores,
        entropy=ents,
        layer_grads=layer_grads,
        loss=answer_loss(model, encoded),
    )


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _job_entropy_stats(traces: Sequence[ExtractedTrace]) -> tuple[float, float]:
    """Median and population std of valid-token entropies across the job
    (same definitions the engine uses when estimating its own stats)."""
    pooled = []
    for tr in traces:
        for text, h in zip(tr.token_texts, tr.entropy):
            if text.strip() != "":
                pooled.append(float(h))
    if not pooled:
        raise ValueError("job produced no valid tokens")
    arr = np.asarray(pooled)
    return float(np.median(arr)), float(np.std(arr))


def write_extracted(
    trace: ExtractedTrace,
    stream,
    h_median: float,
    h_std: float,
) -> None:
    meta = {
        "id": trace.sample.id,
        "problem": trace.sample.problem,
        "answer": trace.sample.answer,
        "h_median": h_median,
        "h_std": h_std,
        "answer_loss": trace.loss,
    }
    if trace.layer_grads is not None:
        meta["layer_count"] = int(trace.layer_grads.shape[1])
    stream.write(_dumps({"meta": meta}) + "\n")
    for i, (tid, text) in enumerate(zip(trace.token_ids, trace.token_texts)):
        obj = {
            "index": i,
            "token_text": text,
            "token_id": int(tid),
            "gogi": float(trace.gogi[i]),
            "entropy": float(trace.entropy[i]),
            "valid": text.strip() != "",
        }
        if trace.layer_grads is not None:
            obj["layer_grads"] = [float(v) for v in trace.layer_grads[i]]
        stream.write(_dumps(obj) + "\n")


def emit_traces(job: ExtractionJob, model, tokenizer: Tokenizer) -> dict:
    """Run the whole job; returns {written: [paths], skipped: [{id, reason}]}.

    Two passes: score everything first, then write each file with the
    job-level entropy statistics on its meta line.
    """
    layer_count = len(decoder_blocks(model))
    target = (
        job.target_layer
        if job.target_layer is not None
        else default_target_layer(layer_count, job.model_id)
    )
    if not (0 <= target < layer_count):
        raise ValueError(f"target layer {target} outside [0, {layer_count})")

    extracted: list[ExtractedTrace] = []
    skipped: list[dict] = []
    for sample in job.samples:
        try:
            extracted.append(
                extract_sample(
                    model,
                    tokenizer,
                    sample,
                    target_layer=target,
                    max_tokens=job.max_tokens,
                    with_layer_grads=job.with_layer_grads,
                )
            )
        except ValueError as exc:
            skipped.append({"id": sample.id, "reason": str(exc)})

    written: list[str] = []
    if extracted:
        h_median, h_std = _job_entropy_stats(extracted)
        out_dir = Path(job.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for tr in extracted:
            path = out_dir / f"{tr.sample.id}.jsonl"
            with open(path, "w", encoding="utf-8") as fh:
                write_extracted(tr, fh, h_median, h_std)
            written.append(str(path))
    return {"written": written, "skipped": skipped, "target_layer": target}
