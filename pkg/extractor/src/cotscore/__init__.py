"""Score chain-of-thought tokens with answer-loss gradients and predictive
entropies from an open-weight causal LM; emit trace JSONL files."""

from .emit import ExtractionJob, Sample, emit_traces, extract_sample
from .layers import layer_contributions, locate_subsequence
from .modeling import decoder_blocks, default_target_layer, down_projection
from .scoring import (
    EncodedSample,
    answer_loss,
    cot_entropies,
    encode_sample,
    entropies,
    entropy_from_logits,
    gogi_scores,
    perturbed_answer_loss,
)
from .tokenizers import CharTokenizer, HFTokenizer

__version__ = "0.1.0"
