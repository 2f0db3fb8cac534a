"""Walk through compressing one scored reasoning trace.

Builds a small hand-made trace (each token carries an importance score and a
predictive entropy), runs the full adaptive pruning method, and prints the
per-position decisions next to the surviving text.
"""

import io

from cotprune import (
    EngineConfig,
    EntropyStats,
    FunctionalCategory,
    TokenRecord,
    Trace,
    classify_token,
    prune,
    write_compressed,
)

# A toy arithmetic trace: numerals and operators carry high importance, the
# surrounding prose mostly doesn't. Entropy spikes at the "therefore" junction.
words = [
    ("The", 0.4, 0.9), ("first", 0.3, 0.7), ("column", 0.5, 0.8),
    ("difference", 0.9, 1.1), ("is", 0.2, 0.4), ("18", 6.0, 0.5),
    ("-", 4.5, 0.3), ("14", 6.2, 0.4), ("=", 5.0, 0.2), ("4", 7.1, 0.3),
    (",", 0.1, 0.5), ("so", 1.2, 2.6), ("the", 0.2, 0.6), ("value", 0.4, 0.9),
    ("above", 0.3, 0.8), ("14", 5.8, 0.4), ("is", 0.2, 0.3), ("10", 6.8, 0.3),
    (".", 0.3, 0.7), ("therefore", 1.5, 2.9), ("N", 7.5, 1.2), ("=", 5.2, 0.4),
    ("-7", 8.0, 0.6),
]

tokens = tuple(
    TokenRecord(
        index=i,
        token_text=text,
        token_id=i,
        gogi=score,
        entropy=entropy,
        category=classify_token(text),
        valid=True,
    )
    for i, (text, score, entropy) in enumerate(words)
)
trace = Trace(id="demo", tokens=tokens)

stats = EntropyStats(h_median=0.6, h_std=0.7)  # pretend corpus-level stats
cfg = EngineConfig()
outcome = prune(trace, cfg, stats)

print(f"kept {outcome.compressed_len}/{len(trace)} tokens "
      f"(retention {outcome.retention_ratio:.2f})\n")
print(f"{'token':>12}  {'score':>6} {'entropy':>7} {'gamma':>6} {'tau':>6} "
      f"{'cap':>4}  decision")
for tok, keep, diag in zip(trace.tokens, outcome.mask.keep, outcome.mask.per_pos):
    decision = "keep" if keep else ("override" if diag["override_fired"] else "prune")
    print(f"{tok.token_text:>12}  {tok.gogi:6.2f} {tok.entropy:7.2f} "
          f"{diag['gamma_t']:6.3f} {diag['tau_t']:6.2f} {diag['n_t']:4d}  {decision}")

survivors = [t.token_text for t, k in zip(trace.tokens, outcome.mask.keep) if k]
print("\ncompressed text:", " ".join(survivors))

# The compressed trace re-serializes to the same JSONL schema it came from.
buf = io.StringIO()
write_compressed(trace, outcome.mask, buf)
print(f"\ncompressed JSONL ({buf.getvalue().count(chr(10))} lines), first two:")
print("\n".join(buf.getvalue().splitlines()[:2]))
