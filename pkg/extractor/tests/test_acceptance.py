"""Acceptance criteria for the scorer, one PASS/FAIL line each.

Runs entirely on a randomly initialized tiny model built offline (well under
100M parameters). Run with ``pytest -s`` to see the lines.
"""

import math
from contextlib import contextmanager

import numpy as np
import torch

from conftest import build_model

from cotscore import (
    encode_sample,
    entropies,
    gogi_scores,
    layer_contributions,
    perturbed_answer_loss,
)
from cotscore.scoring import _answer_nll, _forward_capturing_hidden
from test_layers import oracle_contributions


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"FAIL  {name}", flush=True)
        raise
    print(f"PASS  {name}", flush=True)


def test_s1_entropy_sanity(tiny_model, confident_model, tokenizer, sample):
    """Argmax-forced positions give near-zero entropy; everything stays
    within [0, log vocab]."""
    with criterion("S1 entropy: forced argmax < 0.05 nats, all <= log |V|"):
        assert sum(p.numel() for p in tiny_model.parameters()) < 100_000_000
        s = encode_sample(tokenizer, sample.problem, sample.cot, sample.answer)
        bound = math.log(tokenizer.vocab_size) + 1e-9
        h_plain = entropies(tiny_model, s.input_ids)
        assert np.all(h_plain >= 0.0) and np.all(h_plain <= bound)
        h_forced = entropies(confident_model, s.input_ids)
        assert np.all(h_forced >= 0.0) and np.all(h_forced <= bound)
        assert np.all(h_forced < 0.05), f"max forced H = {h_forced.max():.4f}"
        print(f"      (forced max {h_forced.max():.2e} nats)", flush=True)


def test_s2_gradient_finite_difference(tiny_model, tokenizer, sample):
    """Directional finite differences reproduce the gradient L1 norms within
    1% relative at 20 random positions, for eps in {1e-3, 1e-4}."""
    with criterion("S2 gradient vs finite differences (20 positions, <1%)"):
        layer = 0
        s = encode_sample(tokenizer, sample.problem, sample.cot, sample.answer)
        logits, hidden = _forward_capturing_hidden(tiny_model, s, layer)
        loss = _answer_nll(logits, s)
        (grad,) = torch.autograd.grad(loss, hidden)
        scores = gogi_scores(tiny_model, s, layer)
        base = float(loss.detach())
        rng = np.random.default_rng(2)
        positions = rng.integers(s.cot_start, s.cot_end, 20)
        worst = 0.0
        for t in positions:
            t = int(t)
            gvec = grad[0, t]
            l1 = float(gvec.abs().sum())
            assert l1 == scores[t - s.cot_start]  # same quantity under test
            u = torch.sign(gvec)
            for eps in (1e-3, 1e-4):
                pert = perturbed_answer_loss(tiny_model, s, layer, t, eps * u)
                rel = abs((pert - base) / eps - l1) / l1
                worst = max(worst, rel)
        assert worst < 0.01, f"worst relative error {worst:.4f}"
        print(f"      (worst relative error {worst:.2e})", flush=True)


def test_s3_layer_contribution_oracle(tokenizer, sample):
    """Backward-hook layer contributions match a hook-free autograd oracle
    within 1e-5 on a 2-layer toy model; an unlocatable CoT yields the empty
    result."""
    with criterion("S3 layer contributions match hook-free oracle (<1e-5)"):
        model = build_model(n_embd=48, n_layer=2, seed=3)
        s = encode_sample(tokenizer, sample.problem, sample.cot, sample.answer)
        got = layer_contributions(model, s.input_ids, s.cot_ids)
        want = oracle_contributions(model, s.input_ids, s.cot_ids)
        assert got is not None and want is not None
        diff = np.max(np.abs(got["per_layer"] - want["per_layer"]))
        rel = diff / np.max(np.abs(want["per_layer"]))
        assert diff < 1e-5 and rel < 1e-5, f"diff {diff:.2e}"
        missing = [9999 % tokenizer.vocab_size] * 12
        assert layer_contributions(model, s.input_ids, missing) is None
        print(f"      (max abs diff {diff:.2e})", flush=True)
