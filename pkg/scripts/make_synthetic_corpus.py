"""Write a seeded synthetic corpus (and its knowledge file) for desk-scale runs."""

import argparse
from pathlib import Path

from seek.corpus import save_corpus
from seek.knowledge import write_precomputed
from seek.synthetic import desk_setup

ap = argparse.ArgumentParser()
ap.add_argument("--out", default="runs/synthetic")
ap.add_argument("--dialogues", type=int, default=200)
ap.add_argument("--vocab", type=int, default=60)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--valid-fraction", type=float, default=0.1)
args = ap.parse_args()

out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)
dialogues, vocab, provider = desk_setup(args.vocab, args.dialogues, args.seed, n_utterances=(2, 6))
n_valid = max(1, int(len(dialogues) * args.valid_fraction))
save_corpus(out / "train.jsonl", dialogues[n_valid:])
save_corpus(out / "valid.jsonl", dialogues[:n_valid])
n = write_precomputed(out / "knowledge.jsonl", [u.text for d in dialogues for u in d.utterances], provider)
print(f"{len(dialogues) - n_valid} train / {n_valid} valid dialogues, {n} knowledge records -> {out}")
