"""How raw entropies become retention rates and prune-run caps.

Prints the normalization curves for every mapping mode, then shows the two
policy maps driven by them: the local retention rate and the consecutive-
prune cap, including the cap refinements near a sharp entropy transition.
"""

import numpy as np

from cotprune import EngineConfig, EntropyStats, MappingMode, map_entropy, resolve_auto
from cotprune.policy import adaptive_n, refine_n, retention_rate, windowed_entropy

stats = EntropyStats(h_median=1.0, h_std=0.5)
cfg = EngineConfig()

print("normalized entropy by mode (median 1.0, std 0.5, scale 1.8)")
hs = np.linspace(0.0, 3.0, 13)
modes = [MappingMode.SIGMOID, MappingMode.TANH, MappingMode.GAUSSIAN,
         MappingMode.PIECEWISE]
print(f"{'h':>5} " + " ".join(f"{m.value:>9}" for m in modes))
for h in hs:
    row = " ".join(
        f"{map_entropy(float(h), stats, m, cfg.s_gamma):9.3f}" for m in modes
    )
    print(f"{h:5.2f} {row}")

picked = resolve_auto(stats)
print(f"\nauto mode for these stats resolves to: {picked.value}")

print("\nretention rate and cap across the normalized range")
print(f"{'h_hat':>6} {'gamma':>6} {'cap':>4}")
for x in np.linspace(0, 1, 11):
    print(f"{x:6.2f} {retention_rate(float(x), cfg):6.3f} "
          f"{adaptive_n(float(x), cfg):4d}")

# Cap refinement: a stable stretch relaxes the cap; an entropy jump shrinks it.
print("\ncap refinement on a flat-then-spiking normalized entropy profile")
profile = [0.50, 0.50, 0.50, 0.50, 0.51, 0.95, 0.94, 0.50]
stable = 0
prev = profile[0]
for t, now in enumerate(profile):
    n, stable = refine_n(5, now, prev, stable, cfg)
    print(f"step {t}: h_hat={now:.2f}  cap 5 -> {n}  (stability counter {stable})")
    prev = now

# Windowed entropy handles the boundaries by replicating the edge values.
seq = [0.2, 0.4, 0.9, 2.5, 0.7]
print("\nwindowed entropy (window 3) with edge replication:")
print([round(windowed_entropy(seq, t, 3), 3) for t in range(len(seq))])
