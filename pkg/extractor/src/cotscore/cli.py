"""Command line: score a JSONL file of samples with a causal LM.

Input lines need {"id", "problem", "cot", "answer"}; output is one trace
JSONL per sample in the output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .emit import ExtractionJob, Sample, emit_traces
from .tokenizers import HFTokenizer


def load_samples(path: str) -> list[Sample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            samples.append(
                Sample(
                    id=str(obj.get("id", f"sample-{lineno}")),
                    problem=obj["problem"],
                    cot=obj["cot"],
                    answer=obj["answer"],
                )
            )
    return samples


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotscore", description="Score reasoning traces with a causal LM."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="score samples and emit trace files")
    p.add_argument("--model", required=True, help="model id or local path")
    p.add_argument("--samples", required=True, help="input samples JSONL")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--layer", type=int, default=None,
                   help="target layer (default: family table or 0.68 depth)")
    p.add_argument("--max-tokens", type=int, default=1500)
    p.add_argument("--layer-grads", action="store_true",
                   help="also record per-layer gradient norms per token")
    p.add_argument("--device", default="cpu")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    import torch
    from transformers import AutoModelForCausalLM, AutoTokenizer

    model = AutoModelForCausalLM.from_pretrained(args.model, dtype=torch.float32)
    model.to(args.device)
    model.eval()
    tokenizer = HFTokenizer(AutoTokenizer.from_pretrained(args.model))

    job = ExtractionJob(
        samples=load_samples(args.samples),
        output_dir=args.out,
        model_id=args.model,
        target_layer=args.layer,
        max_tokens=args.max_tokens,
        with_layer_grads=args.layer_grads,
    )
    result = emit_traces(job, model, tokenizer)
    print(f"wrote {len(result['written'])} trace(s), "
          f"skipped {len(result['skipped'])}, "
          f"target layer {result['target_layer']}")
    for skip in result["skipped"]:
        print(f"skipped {skip['id']}: {skip['reason']}", file=sys.stderr)
    return 0 if result["written"] else 1


if __name__ == "__main__":
    sys.exit(main())
