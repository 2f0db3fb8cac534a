"""Shared test construction helpers."""

from cotprune.trace import TokenRecord, Trace, classify_token


def build_trace(
    gogi,
    entropy,
    valid=None,
    texts=None,
    trace_id="t",
    layer_grads=None,
):
    """Assemble a Trace from parallel value sequences."""
    n = len(gogi)
    if valid is None:
        valid = [True] * n
    if texts is None:
        texts = [f"w{i}" for i in range(n)]
    tokens = tuple(
        TokenRecord(
            index=i,
            token_text=texts[i],
            token_id=i,
            gogi=float(gogi[i]),
            entropy=float(entropy[i]),
            category=classify_token(texts[i]),
            valid=bool(valid[i]),
        )
        for i in range(n)
    )
    return Trace(id=trace_id, tokens=tokens, layer_grads=layer_grads)
