"""Scored reasoning traces: token records, functional categories, JSONL IO.

A trace is one chain-of-thought token sequence where every token carries a
gradient-based importance score (``gogi``: L1 norm of the answer-loss gradient
at that token's hidden state), a predictive entropy in nats, a functional
category, and a validity flag. Traces are exchanged as JSON-lines files with
one token object per line and an optional leading ``{"meta": ...}`` line.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import IO, Any, Iterable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "FunctionalCategory",
    "TokenRecord",
    "Trace",
    "KeepMask",
    "TraceParseError",
    "TraceValidationError",
    "ContractError",
    "classify_token",
    "parse_trace",
    "write_trace",
    "write_compressed",
]


class TraceParseError(ValueError):
    """A line of a trace file is not valid JSON or misses required fields."""


class TraceValidationError(ValueError):
    """Parsed values violate a trace invariant (non-finite score, gaps...)."""


class ContractError(ValueError):
    """An operation was called with arguments violating its contract."""


class FunctionalCategory(Enum):
    """Functional role of a token, used by the retention analyses."""

    NUMERALS = "Numerals"
    OPERATORS = "Operators"
    SYMBOLS = "Symbols"
    FORMATTING = "Formatting"
    CONNECTIVES = "Connectives"
    GENERAL = "General"


# Fixed lexicons keep the categorization reproducible across runs. Tokens are
# matched after stripping sub-word markers, in the order: numeral, operator,
# symbol, formatting, connective, general.
_OPERATOR_SET = frozenset(
    {"+", "−", "*", "/", "=", "<", ">", "^", "·", "±",
     "\\frac", "\\cdot"}
)
_CONNECTIVE_SET = frozenset(
    {"therefore", "so", "since", "then", "thus", "because", "hence",
     "implies", "next", "also"}
)
_FORMATTING_MARKERS = frozenset(
    {"#", "##", "###", "-", "--", "---", "•", "```", "***", "___"}
)
_NUMERAL_EXTRA = frozenset(".,_+-%−")
_SUBWORD_MARKERS = ("▁", "Ġ", "##")

# Unicode blocks counted as math/Greek glyphs for the Symbols rule.
_SYMBOL_RANGES = (
    (0x0370, 0x03FF),  # Greek and Coptic
    (0x1F00, 0x1FFF),  # Greek Extended
    (0x2190, 0x21FF),  # Arrows
    (0x2200, 0x22FF),  # Mathematical Operators
    (0x27C0, 0x27EF),
    (0x2980, 0x29FF),
    (0x2A00, 0x2AFF),
    (0x1D400, 0x1D7FF),  # Mathematical Alphanumeric Symbols
)


def _strip_subword_markers(text: str) -> str:
    for marker in _SUBWORD_MARKERS:
        if text.startswith(marker):
            text = text[len(marker):]
    return text


def _is_symbol_char(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _SYMBOL_RANGES) or ch == "$"


def classify_token(token_text: str) -> FunctionalCategory:
    """Deterministically map a token's surface form to its category.

    Total function: empty or whitespace-only text is Formatting. Sub-word
    markers (SentencePiece/BPE prefixes) are stripped before matching so that
    pieces inherit the category of their surface form.
    """
    if token_text.strip() == "":
        return FunctionalCategory.FORMATTING
    s = _strip_subword_markers(token_text).strip()
    if s == "":
        return FunctionalCategory.FORMATTING
    if any(c.isdigit() for c in s) and all(
        c.isdigit() or c in _NUMERAL_EXTRA for c in s
    ):
        return FunctionalCategory.NUMERALS
    if s in _OPERATOR_SET:
        return FunctionalCategory.OPERATORS
    if (s.startswith("\\") and len(s) > 1) or all(_is_symbol_char(c) for c in s):
        return FunctionalCategory.SYMBOLS
    if s in _FORMATTING_MARKERS:
        return FunctionalCategory.FORMATTING
    if s.lower() in _CONNECTIVE_SET:
        return FunctionalCategory.CONNECTIVES
    return FunctionalCategory.GENERAL


def _check_score(name: str, value: float, where: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0.0:
        raise TraceValidationError(
            f"{where}: {name} must be finite and >= 0, got {value!r}"
        )
    return value


@dataclass(frozen=True)
class TokenRecord:
    """One scored token: position, surface form, importance, uncertainty."""

    index: int
    token_text: str
    token_id: int
    gogi: float
    entropy: float
    category: FunctionalCategory
    valid: bool = True

    def __post_init__(self) -> None:
        _check_score("gogi", self.gogi, f"token {self.index}")
        _check_score("entropy", self.entropy, f"token {self.index}")


@dataclass(frozen=True)
class Trace:
    """An ordered token sequence plus optional provenance and layer norms.

    ``layer_grads``, when present, is a [position x layer] matrix of
    non-negative per-layer gradient L1 norms with one row per token.
    ``meta_h_median``/``meta_h_std`` carry global entropy statistics from the
    file's meta line when the producer recorded them.
    """

    id: str = ""
    tokens: tuple[TokenRecord, ...] = ()
    problem: Optional[str] = None
    answer: Optional[str] = None
    layer_grads: Optional[np.ndarray] = None
    meta_h_median: Optional[float] = None
    meta_h_std: Optional[float] = None

    def __post_init__(self) -> None:
        for i, tok in enumerate(self.tokens):
            if tok.index != i:
                raise TraceValidationError(
                    f"trace {self.id!r}: token index {tok.index} at position "
                    f"{i} breaks the contiguous 0-based indexing"
                )
        if self.layer_grads is not None:
            lg = np.asarray(self.layer_grads, dtype=np.float64)
            if lg.ndim != 2 or lg.shape[0] != len(self.tokens):
                raise TraceValidationError(
                    f"trace {self.id!r}: layer_grads must have one row per "
                    f"token, got shape {lg.shape} for {len(self.tokens)} tokens"
                )
            object.__setattr__(self, "layer_grads", lg)

    def __len__(self) -> int:
        return len(self.tokens)

    def gogi_array(self) -> np.ndarray:
        return np.array([t.gogi for t in self.tokens], dtype=np.float64)

    def entropy_array(self) -> np.ndarray:
        return np.array([t.entropy for t in self.tokens], dtype=np.float64)

    def valid_array(self) -> np.ndarray:
        return np.array([t.valid for t in self.tokens], dtype=bool)


@dataclass(frozen=True)
class KeepMask:
    """Per-token keep/prune decisions with per-position diagnostics.

    ``consec`` is the consecutive-prune counter after processing each
    position: 0 wherever a token is kept, previous+1 wherever it is pruned.
    ``gamma``/``tau``/``run_cap`` hold the local retention rate, score
    threshold and consecutive-prune cap used at each decision; positions where
    no policy decision was evaluated (invalid tokens, static masks) hold NaN.
    ``override`` flags positions pruned by the extreme low-importance rule.
    """

    keep: np.ndarray
    consec: np.ndarray
    gamma: np.ndarray
    tau: np.ndarray
    run_cap: np.ndarray
    override: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.keep)
        for name in ("consec", "gamma", "tau", "run_cap", "override"):
            if len(getattr(self, name)) != n:
                raise ContractError(f"KeepMask field {name} length mismatch")
        run = 0
        for i, (k, c) in enumerate(zip(self.keep, self.consec)):
            run = 0 if k else run + 1
            if c != run:
                raise ContractError(
                    f"KeepMask consec[{i}]={c} inconsistent with keep pattern"
                )

    def __len__(self) -> int:
        return len(self.keep)

    @property
    def per_pos(self) -> list[dict[str, Any]]:
        """Per-position diagnostics dicts (None entries where not computed)."""
        out = []
        for g, t, n, o in zip(self.gamma, self.tau, self.run_cap, self.override):
            out.append(
                {
                    "gamma_t": None if math.isnan(g) else float(g),
                    "tau_t": None if math.isnan(t) else float(t),
                    "n_t": None if math.isnan(n) else int(n),
                    "override_fired": bool(o),
                }
            )
        return out

    @classmethod
    def from_keep(cls, keep: Sequence[bool]) -> "KeepMask":
        """Build a diagnostics-free mask (NaN policy fields) from keep flags."""
        keep_arr = np.asarray(keep, dtype=bool)
        consec = np.zeros(len(keep_arr), dtype=np.int64)
        run = 0
        for i, k in enumerate(keep_arr):
            run = 0 if k else run + 1
            consec[i] = run
        nan = np.full(len(keep_arr), np.nan)
        return cls(
            keep=keep_arr,
            consec=consec,
            gamma=nan.copy(),
            tau=nan.copy(),
            run_cap=nan.copy(),
            override=np.zeros(len(keep_arr), dtype=bool),
        )


# --- JSONL parsing -----------------------------------------------------------

_REQUIRED_TOKEN_FIELDS = ("index", "token_text", "token_id", "gogi", "entropy")


def _default_valid(token_text: str) -> bool:
    # Fallback when the producer omitted the flag: whitespace-only tokens are
    # non-substantive, everything else substantive.
    return token_text.strip() != ""


def _coerce_stream(stream: Union[IO[bytes], IO[str], bytes, str]) -> Iterable[str]:
    if isinstance(stream, bytes):
        return stream.decode("utf-8").splitlines()
    if isinstance(stream, str):
        return stream.splitlines()
    first = stream.read()
    if isinstance(first, bytes):
        return first.decode("utf-8").splitlines()
    return first.splitlines()


def parse_trace(stream: Union[IO[bytes], IO[str], bytes, str]) -> Trace:
    """Parse one trace from a JSONL stream (bytes, text, or file object).

    The first line may be ``{"meta": {...}}`` carrying id, answer, problem,
    h_median/h_std and layer_count. Token lines need index, token_text,
    token_id, gogi and entropy; ``valid`` defaults to the whitespace rule,
    ``category`` is recomputed when absent, unknown fields are ignored.

    Raises TraceParseError (malformed line, missing field, empty stream) or
    TraceValidationError (non-finite scores, index gaps, bad layer_grads),
    each naming the offending line.
    """
    meta: dict[str, Any] = {}
    tokens: list[TokenRecord] = []
    layer_rows: list[Optional[list[float]]] = []
    for lineno, raw in enumerate(_coerce_stream(stream), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"line {lineno}: malformed JSON: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise TraceParseError(f"line {lineno}: expected a JSON object")
        if "meta" in obj:
            if tokens:
                raise TraceParseError(
                    f"line {lineno}: meta line must precede all token lines"
                )
            if not isinstance(obj["meta"], dict):
                raise TraceParseError(f"line {lineno}: meta must be an object")
            meta = obj["meta"]
            continue
        missing = [f for f in _REQUIRED_TOKEN_FIELDS if f not in obj]
        if missing:
            raise TraceParseError(
                f"line {lineno}: missing required field(s) {', '.join(missing)}"
            )
        text = obj["token_text"]
        if not isinstance(text, str):
            raise TraceParseError(f"line {lineno}: token_text must be a string")
        try:
            gogi = _check_score("gogi", obj["gogi"], f"line {lineno}")
            entropy = _check_score("entropy", obj["entropy"], f"line {lineno}")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, TraceValidationError):
                raise
            raise TraceParseError(f"line {lineno}: {exc}") from exc
        if "category" in obj and obj["category"] is not None:
            try:
                category = FunctionalCategory(obj["category"])
            except ValueError as exc:
                raise TraceValidationError(
                    f"line {lineno}: unknown category {obj['category']!r}"
                ) from exc
        else:
            category = classify_token(text)
        valid = obj["valid"] if "valid" in obj else _default_valid(text)
        try:
            record = TokenRecord(
                index=int(obj["index"]),
                token_text=text,
                token_id=int(obj["token_id"]),
                gogi=gogi,
                entropy=entropy,
                category=category,
                valid=bool(valid),
            )
        except TraceValidationError as exc:
            raise TraceValidationError(f"line {lineno}: {exc}") from exc
        tokens.append(record)
        layer_rows.append(
            [float(v) for v in obj["layer_grads"]] if "layer_grads" in obj else None
        )
    if not tokens:
        raise TraceParseError("empty trace")

    if tokens[0].index != 0 or any(
        t.index != i for i, t in enumerate(tokens)
    ):
        raise TraceValidationError(
            "token indices must be contiguous and 0-based"
        )

    layer_grads: Optional[np.ndarray] = None
    if any(row is not None for row in layer_rows):
        if any(row is None for row in layer_rows):
            raise TraceValidationError(
                "layer_grads present on some token lines but not all"
            )
        widths = {len(row) for row in layer_rows}  # type: ignore[arg-type]
        if len(widths) != 1:
            raise TraceValidationError(
                f"layer_grads rows have inconsistent layer counts {sorted(widths)}"
            )
        if "layer_count" in meta and int(meta["layer_count"]) != widths.pop():
            raise TraceValidationError(
                "meta layer_count disagrees with layer_grads row width"
            )
        layer_grads = np.asarray(layer_rows, dtype=np.float64)

    def _meta_float(key: str) -> Optional[float]:
        if key not in meta or meta[key] is None:
            return None
        v = float(meta[key])
        if not math.isfinite(v) or v < 0:
            raise TraceValidationError(f"meta {key} must be finite and >= 0")
        return v

    return Trace(
        id=str(meta.get("id", "")),
        tokens=tuple(tokens),
        problem=meta.get("problem"),
        answer=meta.get("answer"),
        layer_grads=layer_grads,
        meta_h_median=_meta_float("h_median"),
        meta_h_std=_meta_float("h_std"),
    )


# --- JSONL writing -----------------------------------------------------------


def _dumps(obj: dict[str, Any]) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _write_line(stream: Union[IO[bytes], IO[str]], text: str) -> None:
    data = text + "\n"
    try:
        stream.write(data)  # type: ignore[arg-type]
    except TypeError:
        stream.write(data.encode("utf-8"))  # type: ignore[arg-type]


def _meta_object(trace: Trace, token_count: int) -> dict[str, Any]:
    meta: dict[str, Any] = {"id": trace.id}
    if trace.problem is not None:
        meta["problem"] = trace.problem
    if trace.answer is not None:
        meta["answer"] = trace.answer
    if trace.meta_h_median is not None:
        meta["h_median"] = trace.meta_h_median
    if trace.meta_h_std is not None:
        meta["h_std"] = trace.meta_h_std
    if trace.layer_grads is not None:
        meta["layer_count"] = int(trace.layer_grads.shape[1])
    meta["token_count"] = token_count
    return meta


def _token_object(tok: TokenRecord, index: int, layer_row: Optional[np.ndarray]) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "index": index,
        "token_text": tok.token_text,
        "token_id": tok.token_id,
        "gogi": tok.gogi,
        "entropy": tok.entropy,
        "valid": tok.valid,
        "category": tok.category.value,
    }
    if layer_row is not None:
        obj["layer_grads"] = [float(v) for v in layer_row]
    return obj


def write_trace(trace: Trace, stream: Union[IO[bytes], IO[str]]) -> int:
    """Write a full trace (meta line + every token) to a JSONL sink."""
    _write_line(stream, _dumps({"meta": _meta_object(trace, len(trace))}))
    for i, tok in enumerate(trace.tokens):
        row = trace.layer_grads[i] if trace.layer_grads is not None else None
        _write_line(stream, _dumps(_token_object(tok, i, row)))
    return len(trace)


def write_compressed(
    trace: Trace,
    mask: KeepMask,
    stream: Union[IO[bytes], IO[str]],
    diagnostics_stream: Union[IO[bytes], IO[str], None] = None,
) -> int:
    """Emit the kept tokens (re-indexed, original order) as a trace JSONL.

    When ``diagnostics_stream`` is given, a sidecar JSON object with the full
    keep mask and per-position diagnostics is written there. Returns the
    number of kept tokens. Raises ContractError on a length mismatch.
    """
    if len(mask) != len(trace):
        raise ContractError(
            f"mask length {len(mask)} does not match trace length {len(trace)}"
        )
    kept = int(np.count_nonzero(mask.keep))
    _write_line(stream, _dumps({"meta": _meta_object(trace, kept)}))
    out_index = 0
    for i, tok in enumerate(trace.tokens):
        if not mask.keep[i]:
            continue
        row = trace.layer_grads[i] if trace.layer_grads is not None else None
        _write_line(stream, _dumps(_token_object(tok, out_index, row)))
        out_index += 1
    if diagnostics_stream is not None:
        _write_line(diagnostics_stream, _dumps(mask_diagnostics(trace, mask)))
    return kept


def mask_diagnostics(trace: Trace, mask: KeepMask) -> dict[str, Any]:
    """Sidecar diagnostics object for a (trace, mask) pair."""

    def _nums(arr: np.ndarray) -> list[Optional[float]]:
        return [None if math.isnan(v) else float(v) for v in arr]

    return {
        "trace_id": trace.id,
        "token_count": len(trace),
        "kept": int(np.count_nonzero(mask.keep)),
        "keep": [int(k) for k in mask.keep],
        "consec": [int(c) for c in mask.consec],
        "gamma": _nums(mask.gamma),
        "tau": _nums(mask.tau),
        "run_cap": [None if math.isnan(v) else int(v) for v in mask.run_cap],
        "override": [int(o) for o in mask.override],
    }
