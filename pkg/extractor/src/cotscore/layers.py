"""Per-layer contribution profiling for target-layer selection.

For each valid CoT position, backpropagate from the top-1 logit and record
the L1 norm of the gradient arriving at every block's MLP down-projection
input; a layer's contribution is the mean over positions. Used to pick the
scoring layer for a new model family.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch

from .modeling import decoder_blocks, down_projection

__all__ = ["locate_subsequence", "layer_contributions"]


def locate_subsequence(haystack: Sequence[int], needle: Sequence[int]):
    """First occurrence of ``needle`` in ``haystack`` as [start, end), or
    None when absent or empty."""
    n, m = len(haystack), len(needle)
    if m == 0 or m > n:
        return None
    first = needle[0]
    for i in range(n - m + 1):
        if haystack[i] == first and list(haystack[i : i + m]) == list(needle):
            return i, i + m
    return None


def layer_contributions(
    model,
    input_ids: torch.Tensor,
    cot_ids: Sequence[int],
) -> Optional[dict]:
    """Mean per-layer down-projection gradient norms over the CoT positions.

    Returns {"per_layer": np.ndarray [L], "positions": int, "per_position":
    np.ndarray [positions, L]} or None when the CoT ids cannot be located in
    the sequence (or no position qualifies). The final sequence position is
    skipped since it predicts nothing inside the sample.
    """
    span = locate_subsequence(input_ids[0].tolist(), list(cot_ids))
    if span is None:
        return None
    start, end = span
    blocks = decoder_blocks(model)
    n_layers = len(blocks)

    grabbed: dict[int, float] = {}

    def make_hook(layer_idx: int):
        def hook(_module, grad_input, _grad_output):
            g = grad_input[0]
            if g is not None:
                grabbed[layer_idx] = float(g.abs().sum())

        return hook

    handles = [
        down_projection(block).register_full_backward_hook(make_hook(i))
        for i, block in enumerate(blocks)
    ]
    try:
        logits = model(input_ids).logits
        total = int(logits.shape[1])
        rows = []
        positions = []
        for t in range(start, end):
            if t >= total - 1:
                continue
            model.zero_grad(set_to_none=True)
            grabbed.clear()
            top = int(torch.argmax(logits[0, t]))
            logits[0, t, top].backward(retain_graph=True)
            rows.append([grabbed.get(layer, 0.0) for layer in range(n_layers)])
            positions.append(t)
    finally:
        for h in handles:
            h.remove()
        model.zero_grad(set_to_none=True)
    if not rows:
        return None
    per_position = np.asarray(rows, dtype=np.float64)
    return {
        "per_layer": per_position.mean(axis=0),
        "positions": len(rows),
        "per_position": per_position,
        "cot_span": (start, end),
    }
