"""Reproducible batch runs through the command-line front end.

Writes a small corpus of trace files, then drives the CLI in-process:
tune -> compress (with the tuned config) -> ablate -> stats. Every artifact
is deterministic for a fixed manifest.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from cotprune import TokenRecord, Trace, classify_token, write_trace
from cotprune.cli import main

rng = np.random.default_rng(17)
root = Path(tempfile.mkdtemp(prefix="cotprune-demo-"))
in_dir = root / "traces"
in_dir.mkdir()

for k in range(6):
    n = int(rng.integers(60, 160))
    texts = [" " if rng.random() < 0.08 else
             (str(i) if rng.random() < 0.3 else f"w{i}") for i in range(n)]
    tokens = tuple(
        TokenRecord(index=i, token_text=texts[i], token_id=i,
                    gogi=float(rng.lognormal(0, 1)),
                    entropy=float(rng.lognormal(-0.3, 0.6)),
                    category=classify_token(texts[i]),
                    valid=texts[i].strip() != "")
        for i in range(n)
    )
    with open(in_dir / f"trace-{k}.jsonl", "w", encoding="utf-8") as fh:
        write_trace(Trace(id=f"demo-{k}", tokens=tokens), fh)

print(f"corpus: {len(list(in_dir.glob('*.jsonl')))} traces in {in_dir}\n")

cfg_path = root / "tuned.json"
assert main(["tune", "--in", str(in_dir), "--out-config", str(cfg_path)]) == 0

out_dir = root / "compressed"
assert main(["compress", "--in", str(in_dir), "--out", str(out_dir),
             "--config", str(cfg_path)]) == 0
summary = json.loads((out_dir / "summary.json").read_text())
agg = summary["aggregate"]
print(f"compress: kept {agg['kept']}/{agg['tokens']} tokens "
      f"({agg['retention_ratio']:.2%}) across {agg['traces']} traces")
print(f"  tuned gamma_target = {summary['config']['gamma_target']:.4f}")
print(f"  entropy stats came from: {summary['stats']['source']}\n")

abl_dir = root / "ablation"
assert main(["ablate", "--in", str(in_dir), "--out", str(abl_dir),
             "--config", str(cfg_path)]) == 0
print("ablation (retention by variant):")
for row in json.loads((abl_dir / "ablate.json").read_text())["variants"]:
    print(f"  {row['variant']:<12} retention {row['retention_ratio']:.3f}")

stats_dir = root / "stats"
assert main(["stats", "--in", str(in_dir), "--out", str(stats_dir),
             "--masks", str(out_dir), "--config", str(cfg_path)]) == 0
doc = json.loads((stats_dir / "stats.json").read_text())
print(f"\nstats: corpus entropy median {doc['entropy']['h_median']:.3f}, "
      f"std {doc['entropy']['h_std']:.3f}")
print(f"  overall retention from masks: "
      f"{doc['retention_by_category']['overall']['rate']:.2%}")
print(f"  cap preservation aggregate: "
      f"{doc['cap_preservation']['aggregate']['rate']:.2%}")
print(f"\nartifacts under {root}")
