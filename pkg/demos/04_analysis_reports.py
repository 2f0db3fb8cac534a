"""The diagnostic reports: retention by category, cap preservation, rank
correlations, and the decision surface grid."""

import io

import numpy as np

from cotprune import (
    EngineConfig,
    EntropyStats,
    MappingMode,
    TokenRecord,
    Trace,
    cap_preservation,
    classify_token,
    combine_preservation,
    correlation_matrix,
    decision_surface,
    prune,
    retention_by_category,
    spearman,
)

rng = np.random.default_rng(9)


def make_trace(k):
    """Numerals/operators score high; words fill the gaps and form runs."""
    texts, scores = [], []
    for i in range(120):
        r = rng.random()
        if r < 0.2:
            texts.append(str(int(rng.integers(0, 50))))
            scores.append(float(rng.uniform(8, 12)))
        elif r < 0.3:
            texts.append("+" if rng.random() < 0.5 else "=")
            scores.append(float(rng.uniform(8, 12)))
        elif r < 0.36:
            texts.append("therefore")
            scores.append(float(rng.uniform(3, 5)))
        else:
            texts.append(f"word{i}")
            scores.append(float(rng.uniform(3, 5)))
    entropies = rng.lognormal(-0.3, 0.5, 120)
    tokens = tuple(
        TokenRecord(index=i, token_text=texts[i], token_id=i, gogi=scores[i],
                    entropy=float(entropies[i]),
                    category=classify_token(texts[i]), valid=True)
        for i in range(120)
    )
    return Trace(id=f"an{k}", tokens=tokens)


traces = [make_trace(k) for k in range(25)]
stats = EntropyStats(0.7, 0.35)
cfg = EngineConfig()

masks = [prune(tr, cfg, stats).mask for tr in traces]

print("retention by functional category")
rep = retention_by_category(traces, masks)
for cat, row in rep.per_category.items():
    if row.total:
        print(f"  {cat.value:<12} {row.kept:>5}/{row.total:<5} = {row.rate:6.1%}")
print(f"  overall {rep.overall_ratio:.1%}\n")

print("preservation by the consecutive-prune cap")
pres = combine_preservation([cap_preservation(tr, cfg, stats) for tr in traces])
for cat, row in pres.per_category.items():
    if row.initially_pruned:
        print(f"  {cat.value:<12} {row.preserved_by_cap:>4}/{row.initially_pruned:<5} "
              f"= {row.rate:6.1%}")
print(f"  aggregate {pres.aggregate.rate:.1%}\n")

print("importance and entropy are nearly orthogonal signals:")
g = np.concatenate([tr.gogi_array() for tr in traces])
h = np.concatenate([tr.entropy_array() for tr in traces])
print(f"  token-level rank correlation = {spearman(g, h):+.4f}\n")

print("per-trace summary correlations (first row of the matrix):")
doc = correlation_matrix(traces)
first = doc["features"][0]
for other in doc["features"]:
    val = doc["spearman"][first][other]
    print(f"  {first:<13} vs {other:<13} {val:+.3f}" if val is not None
          else f"  {first:<13} vs {other:<13} undefined")

print("\ndecision surface corner (entropy x score-quantile -> keep?):")
surf = decision_surface(
    EngineConfig(mapping_mode=MappingMode.SIGMOID), stats,
    h_grid=np.linspace(0, 2.5, 6), q_grid=np.linspace(0, 1, 5),
)
buf = io.StringIO()
surf.write_csv(buf)
print("\n".join(buf.getvalue().splitlines()[:8]))
print("  ... (full grid in the CSV; rows are monotone in entropy)")
