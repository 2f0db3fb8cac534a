"""Answer loss, per-token gradient importance, and predictive entropies.

The importance score of CoT token t is the L1 norm of the gradient of the
summed answer negative log-likelihood with respect to that token's hidden
state at the target decoder block's output. Entropies are next-token
predictive entropies in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .modeling import decoder_blocks
from .tokenizers import Tokenizer

__all__ = [
    "EncodedSample",
    "encode_sample",
    "answer_loss",
    "gogi_scores",
    "entropies",
    "cot_entropies",
    "entropy_from_logits",
    "perturbed_answer_loss",
]


@dataclass(frozen=True)
class EncodedSample:
    """Token ids for problem + reasoning + answer with the two ranges kept."""

    input_ids: torch.Tensor  # [1, T] long
    cot_start: int
    cot_end: int  # half-open
    answer_start: int
    answer_end: int

    @property
    def length(self) -> int:
        return int(self.input_ids.shape[1])

    @property
    def cot_ids(self) -> list[int]:
        return self.input_ids[0, self.cot_start : self.cot_end].tolist()


def encode_sample(
    tokenizer: Tokenizer, problem: str, cot: str, answer: str
) -> EncodedSample:
    """Tokenize the three parts separately so the ranges are exact."""
    prefix = tokenizer.encode(problem + "\n")
    cot_ids = tokenizer.encode(cot)
    sep = tokenizer.encode("\n")
    answer_ids = tokenizer.encode(answer)
    if not cot_ids:
        raise ValueError("empty reasoning segment")
    if not answer_ids:
        raise ValueError("empty answer segment")
    ids = prefix + cot_ids + sep + answer_ids
    cot_start = len(prefix)
    cot_end = cot_start + len(cot_ids)
    answer_start = cot_end + len(sep)
    return EncodedSample(
        input_ids=torch.tensor([ids], dtype=torch.long),
        cot_start=cot_start,
        cot_end=cot_end,
        answer_start=answer_start,
        answer_end=len(ids),
    )


def _compute_dtype(logits: torch.Tensor) -> torch.dtype:
    # half precision is upcast for the softmax; float64 models stay float64
    return torch.promote_types(logits.dtype, torch.float32)


def _answer_nll(logits: torch.Tensor, sample: EncodedSample) -> torch.Tensor:
    """Summed -log P(answer_j | everything before it). logits: [1, T, V]."""
    log_probs = torch.log_softmax(logits[0].to(_compute_dtype(logits)), dim=-1)
    total = log_probs.new_zeros(())
    for t in range(sample.answer_start, sample.answer_end):
        token = int(sample.input_ids[0, t])
        total = total + (-log_probs[t - 1, token])
    return total


def answer_loss(model, sample: EncodedSample) -> float:
    """Summed answer negative log-likelihood (teacher-forced), >= 0."""
    with torch.no_grad():
        logits = model(sample.input_ids).logits
    return float(_answer_nll(logits, sample))


def _forward_capturing_hidden(model, sample: EncodedSample, target_layer: int):
    """Run the model while grabbing the target block's output hidden states.

    Captures via a forward hook on the block itself so the tensor is exactly
    the residual-stream output of that block, kept in the autograd graph.
    """
    blocks = decoder_blocks(model)
    if not (0 <= target_layer < len(blocks)):
        raise ValueError(
            f"target layer {target_layer} outside [0, {len(blocks)})"
        )
    captured: list[torch.Tensor] = []

    def hook(_module, _inputs, output):
        hidden = output[0] if isinstance(output, tuple) else output
        captured.append(hidden)
        return None

    handle = blocks[target_layer].register_forward_hook(hook)
    try:
        logits = model(sample.input_ids).logits
    finally:
        handle.remove()
    if not captured:
        raise RuntimeError("target block produced no output")
    return logits, captured[0]


def gogi_scores(model, sample: EncodedSample, target_layer: int) -> np.ndarray:
    """Per-CoT-token L1 norms of the answer-loss gradient at the target layer.

    Raises ValueError if any gradient is non-finite (caller skips the sample).
    """
    model.zero_grad(set_to_none=True)
    logits, hidden = _forward_capturing_hidden(model, sample, target_layer)
    loss = _answer_nll(logits, sample)
    (grad,) = torch.autograd.grad(loss, hidden)
    scores = grad[0, sample.cot_start : sample.cot_end].abs().sum(dim=-1)
    arr = scores.detach().cpu().numpy().astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite gradient encountered")
    return arr


def entropy_from_logits(logits: torch.Tensor) -> np.ndarray:
    """Shannon entropy in nats of softmax distributions over the last axis.

    Computed as -sum(p * log p) with the p * log p term forced to zero where
    p underflows, so one-hot distributions give exactly 0.
    """
    log_probs = torch.log_softmax(logits.to(_compute_dtype(logits)), dim=-1)
    probs = log_probs.exp()
    terms = torch.where(probs > 0, probs * log_probs, probs)
    ent = -terms.sum(dim=-1)
    return ent.detach().cpu().numpy().astype(np.float64)


def entropies(model, input_ids: torch.Tensor) -> np.ndarray:
    """Predictive next-token entropy at every position of a [1, T] batch."""
    with torch.no_grad():
        logits = model(input_ids).logits
    return entropy_from_logits(logits[0])


def cot_entropies(model, sample: EncodedSample) -> np.ndarray:
    """Predictive entropies at the CoT positions (distribution after each)."""
    full = entropies(model, sample.input_ids)
    return full[sample.cot_start : sample.cot_end]


def perturbed_answer_loss(
    model,
    sample: EncodedSample,
    target_layer: int,
    position: int,
    delta: torch.Tensor,
) -> float:
    """Answer loss with ``delta`` added to the target block's output at one
    position; used by finite-difference checks of the gradient scores."""
    blocks = decoder_blocks(model)

    def hook(_module, _inputs, output):
        if isinstance(output, tuple):
            hidden = output[0].clone()
            hidden[0, position] = hidden[0, position] + delta
            return (hidden,) + tuple(output[1:])
        hidden = output.clone()
        hidden[0, position] = hidden[0, position] + delta
        return hidden

    handle = blocks[target_layer].register_forward_hook(hook)
    try:
        with torch.no_grad():
            logits = model(sample.input_ids).logits
        return float(_answer_nll(logits, sample))
    finally:
        handle.remove()
