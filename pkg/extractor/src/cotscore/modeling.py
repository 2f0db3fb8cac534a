"""Model plumbing: decoder block access and target-layer selection."""

from __future__ import annotations

import math
from typing import Optional

import torch.nn as nn

# Target layers chosen per model family from layer-contribution peaks; any
# other model falls back to the 0.68-depth rule below.
KNOWN_TARGET_LAYERS = {
    "gemma3-1b": (26, 18),
    "gemma3-4b": (34, 23),
    "gemma3-12b": (48, 35),
    "qwen2.5-3b": (36, 18),
    "qwen2.5-7b": (40, 27),
}

DEPTH_FRACTION = 0.68


def decoder_blocks(model: nn.Module) -> list[nn.Module]:
    """The ordered list of decoder blocks for common causal-LM layouts."""
    for path in ("transformer.h", "model.layers", "gpt_neox.layers"):
        obj = model
        try:
            for part in path.split("."):
                obj = getattr(obj, part)
        except AttributeError:
            continue
        return list(obj)
    raise ValueError("could not locate decoder blocks on this model")


def down_projection(block: nn.Module) -> nn.Module:
    """The MLP down-projection module of one decoder block."""
    mlp = getattr(block, "mlp", None)
    if mlp is None:
        raise ValueError("block has no mlp submodule")
    for name in ("c_proj", "down_proj"):
        mod = getattr(mlp, name, None)
        if mod is not None:
            return mod
    raise ValueError("block mlp has no down-projection (c_proj/down_proj)")


def default_target_layer(layer_count: int, model_id: Optional[str] = None) -> int:
    """Table lookup for known families, else floor(0.68 * layer count).

    Never the final block: downstream of it only position-wise modules
    remain, so CoT positions other than the loss-reading ones would receive
    exactly zero gradient there.
    """
    if model_id:
        key = model_id.lower()
        for family, (layers, target) in KNOWN_TARGET_LAYERS.items():
            if family in key and layers == layer_count:
                return target
    return max(0, min(math.floor(DEPTH_FRACTION * layer_count), layer_count - 2))
