import math

import numpy as np
import pytest
import torch

from cotscore import (
    answer_loss,
    cot_entropies,
    encode_sample,
    entropies,
    entropy_from_logits,
    gogi_scores,
)
from cotscore.scoring import _answer_nll


class TestEncode:
    def test_ranges_are_exact(self, tokenizer, sample):
        s = encode_sample(tokenizer, sample.problem, sample.cot, sample.answer)
        ids = s.input_ids[0].tolist()
        assert [tokenizer.token_text(i) for i in ids[s.cot_start:s.cot_end]] == list(sample.cot)
        assert [tokenizer.token_text(i) for i in ids[s.answer_start:s.answer_end]] == list(sample.answer)

    def test_empty_parts_rejected(self, tokenizer):
        with pytest.raises(ValueError):
            encode_sample(tokenizer, "p", "", "a")
        with pytest.raises(ValueError):
            encode_sample(tokenizer, "p", "c", "")


class TestAnswerLoss:
    def test_nonnegative(self, tiny_model, tokenizer, sample):
        s = encode_sample(tokenizer, sample.problem, sample.cot, sample.answer)
        assert answer_loss(tiny_model, s) >= 0.0

    def test_forced_continuation_has_near_zero_loss(self, confident_model, tokenizer):
        # let the confident model pick its own two answer tokens greedily:
        # each then has probability ~1, so the summed loss collapses to ~0
        prefix_s = encode_sample(tokenizer, "Q?", "some reasoning", "??")
        with torch.no_grad():
            logits = confident_model(prefix_s.input_ids).logits[0]
        a1 = int(torch.argmax(logits[prefix_s.answer_start - 1]))
        ids = prefix_s.input_ids[0].tolist()
        ids[prefix_s.answer_start] = a1
        with torch.no_grad():
            logits = confident_model(torch.tensor([ids])).logits[0]
        a2 = int(torch.argmax(logits[prefix_s.answer_start]))
        ids[prefix_s.answer_start + 1] = a2
        forced = type(prefix_s)(
            input_ids=torch.tensor([ids]),
            cot_start=prefix_s.cot_start,
            cot_end=prefix_s.cot_end,
            answer_start=prefix_s.answer_start,
            answer_end=prefix_s.answer_end,
        )
        assert answer_loss(confident_model, forced) < 0.01

    def test_single_token_loss_is_neg_log_prob(self, tiny_model, tokenizer, sample):
        s = encode_sample(tokenizer, sample.problem, sample.cot, "4")
        with torch.no_grad():
            logits = tiny_model(s.input_ids).logits[0]
        probs = torch.softmax(logits[s.answer_start - 1], dim=-1)
        p = float(probs[int(s.input_ids[0, s.answer_start])])
        assert answer_loss(tiny_model, s) == pytest.approx(-math.log(p), rel=1e-9)

    def test_crafted_probabilities_sum(self, tokenizer):
        # logits = log(p) with p summing to one makes log_softmax(p) exact,
        # so per-token probs 0.5 and 0.25 give loss log 2 + log 4
        s = encode_sample(tokenizer, "p", "cc", "ab")
        vocab = tokenizer.vocab_size
        a1 = int(s.input_ids[0, s.answer_start])
        a2 = int(s.input_ids[0, s.answer_start + 1])
        logits = torch.full((1, s.length, vocab), 0.0, dtype=torch.float64)
        rest = torch.log(torch.tensor(0.5 / (vocab - 1), dtype=torch.float64))
        logits[0, s.answer_start - 1] = rest
        logits[0, s.answer_start - 1, a1] = math.log(0.5)
        rest2 = torch.log(torch.tensor(0.75 / (vocab - 1), dtype=torch.float64))
        logits[0, s.answer_start] = rest2
        logits[0, s.answer_start, a2] = math.log(0.25)
        got = float(_answer_nll(logits, s))
        assert got == pytest.approx(math.log(2) + math.log(4), rel=1e-12)


class TestGogi:
    def test_scores_cover_cot_range_only(self, tiny_model, tokenizer, sample):
        s = encode_sample(tokenizer, sample.problem, sample.cot, sample.answer)
        scores = gogi_scores(tiny_model, s, 0)
        assert scores.shape == (s.cot_end - s.cot_start,)
        assert np.all(np.isfinite(scores)) and np.all(scores >= 0)

    def test_interior_layer_sees_every_position(self, tiny_model, tokenizer, sample):
        s = encode_sample(tokenizer, sample.problem, sample.cot, sample.answer)
        scores = gogi_scores(tiny_model, s, 0)
        assert np.all(scores > 0)

    def test_positionwise_tail_gives_exact_zeros(self, tiny_model, tokenizer, sample):
        # at the final block's output only the loss-reading positions carry
        # gradient; CoT positions are answer-independent there
        s = encode_sample(tokenizer, sample.problem, sample.cot, sample.answer)
        scores = gogi_scores(tiny_model, s, 1)
        assert np.all(scores == 0.0)

    def test_bad_layer_rejected(self, tiny_model, tokenizer, sample):
        s = encode_sample(tokenizer, sample.problem, sample.cot, sample.answer)
        with pytest.raises(ValueError):
            gogi_scores(tiny_model, s, 7)


class TestEntropy:
    def test_one_hot_is_zero(self):
        logits = torch.full((1, 5), -1e9, dtype=torch.float64)
        logits[0, 2] = 10.0
        assert entropy_from_logits(logits)[0] == 0.0

    def test_uniform_is_log_vocab(self):
        logits = torch.zeros((1, 128), dtype=torch.float64)
        assert entropy_from_logits(logits)[0] == pytest.approx(math.log(128), rel=1e-12)

    def test_two_outcome_half_half(self):
        logits = torch.full((1, 64), -1e9, dtype=torch.float64)
        logits[0, 3] = 1.0
        logits[0, 9] = 1.0
        assert entropy_from_logits(logits)[0] == pytest.approx(math.log(2), rel=1e-9)

    def test_model_entropies_bounded(self, tiny_model, tokenizer, sample):
        s = encode_sample(tokenizer, sample.problem, sample.cot, sample.answer)
        h = entropies(tiny_model, s.input_ids)
        assert h.shape[0] == s.length
        assert np.all(h >= 0.0)
        assert np.all(h <= math.log(tokenizer.vocab_size) + 1e-9)

    def test_cot_slice(self, tiny_model, tokenizer, sample):
        s = encode_sample(tokenizer, sample.problem, sample.cot, sample.answer)
        h = cot_entropies(tiny_model, s)
        assert h.shape == (s.cot_end - s.cot_start,)
