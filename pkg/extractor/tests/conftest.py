import warnings

import pytest
import torch

warnings.filterwarnings("ignore")

from transformers import GPT2Config, GPT2LMHeadModel  # noqa: E402

from cotscore import CharTokenizer, Sample  # noqa: E402


def build_model(n_embd=64, n_layer=2, seed=0):
    """Randomly initialized tiny causal LM, float64 for numeric headroom."""
    tok = CharTokenizer()
    torch.manual_seed(seed)
    cfg = GPT2Config(
        vocab_size=tok.vocab_size,
        n_positions=512,
        n_embd=n_embd,
        n_layer=n_layer,
        n_head=2,
        bos_token_id=0,
        eos_token_id=0,
    )
    model = GPT2LMHeadModel(cfg).double()
    model.eval()
    return model


@pytest.fixture(scope="session")
def tokenizer():
    return CharTokenizer()


@pytest.fixture(scope="session")
def tiny_model():
    return build_model()


@pytest.fixture(scope="session")
def confident_model():
    """Same architecture with the LM head scaled so every next-token
    distribution collapses onto its argmax."""
    model = build_model()
    with torch.no_grad():
        model.lm_head.weight.mul_(60.0)
    return model


@pytest.fixture
def sample():
    return Sample(
        id="s0",
        problem="What is 2+2?",
        cot="Since 2+2 means adding two and two, the result is 4",
        answer="4",
    )
