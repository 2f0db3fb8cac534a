"""Tokenizer interface used by the scorer, plus two implementations.

Anything exposing ``encode(text) -> list[int]`` and ``token_text(id) -> str``
works. ``CharTokenizer`` is a dependency-free character tokenizer for tests
and toy models; ``HFTokenizer`` wraps a Hugging Face tokenizer for real
models.
"""

from __future__ import annotations

import string
from typing import Protocol


class Tokenizer(Protocol):
    def encode(self, text: str) -> list[int]: ...

    def token_text(self, token_id: int) -> str: ...

    @property
    def vocab_size(self) -> int: ...


class CharTokenizer:
    """Character-level tokenizer over printable ASCII; unknowns map to '?'."""

    def __init__(self) -> None:
        self.chars = string.printable
        self.index = {c: i for i, c in enumerate(self.chars)}
        self.unknown = self.index["?"]

    @property
    def vocab_size(self) -> int:
        return len(self.chars)

    def encode(self, text: str) -> list[int]:
        return [self.index.get(c, self.unknown) for c in text]

    def token_text(self, token_id: int) -> str:
        return self.chars[token_id]


class HFTokenizer:
    """Adapter over a Hugging Face fast/slow tokenizer."""

    def __init__(self, tokenizer) -> None:
        self._tok = tokenizer

    @property
    def vocab_size(self) -> int:
        return int(self._tok.vocab_size)

    def encode(self, text: str) -> list[int]:
        return self._tok(text, add_special_tokens=False)["input_ids"]

    def token_text(self, token_id: int) -> str:
        return self._tok.decode([token_id])
