#!/usr/bin/env python3
"""Regenerate the bundled 500-molecule corpus (deterministic under its seed)."""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mumo.data import generate_corpus, save_jsonl  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="src/mumo/data/corpus_500.jsonl")
    parser.add_argument("--n", type=int, default=500)
    parser.add_argument("--seed", type=int, default=20240501)
    args = parser.parse_args()
    records = generate_corpus(args.n, args.seed)
    os.makedirs(os.path.dirname(args.out), exist_ok=True)
    save_jsonl(records, args.out)
    print(f"wrote {len(records)} molecules to {args.out}")


if __name__ == "__main__":
    main()
