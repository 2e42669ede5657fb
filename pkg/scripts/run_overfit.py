"""Memorise a handful of synthetic dialogues and report loss, perplexity and head accuracy.

A sanity run: if the full objective cannot drive training NLL to ~0 on ten
dialogues, something in the graph is broken.
"""

import argparse
import json
import time

from seek.config import ModelConfig, TrainConfig
from seek.generator import face_weights
from seek.metrics import accuracies, token_nll
from seek.model import SeekModel, prepare_all
from seek.synthetic import desk_setup
from seek.trainer import train

ap = argparse.ArgumentParser()
ap.add_argument("--dialogues", type=int, default=10)
ap.add_argument("--steps", type=int, default=300)
ap.add_argument("--d", type=int, default=16)
ap.add_argument("--seed", type=int, default=3)
ap.add_argument("--gamma", type=float, default=1.5)
args = ap.parse_args()

cfg = ModelConfig(d=args.d, layers=1, heads=2, L_n=12, L_s=40)
dialogues, vocab, provider = desk_setup(40, args.dialogues, seed=args.seed, n_utterances=(3, 5))
exs = prepare_all(dialogues, vocab, provider, cfg)
model = SeekModel(cfg, vocab, seed=args.seed, face_w=face_weights(vocab))
tcfg = TrainConfig(batch_size=args.dialogues, warmup_steps=50, max_epochs=args.steps, max_steps=args.steps,
                   patience=args.steps, seed=args.seed, gamma=args.gamma)

t0 = time.perf_counter()
res = train(model, exs, tcfg)
elapsed = time.perf_counter() - t0
for i in range(0, len(res.step_losses), max(1, len(res.step_losses) // 10)):
    print(f"step {i + 1:4d}  loss {res.step_losses[i]:9.4f}  lr {res.lr_trace[i]:.2e}")
de, uei, rei = accuracies(model, exs)
print(json.dumps({"steps": res.steps, "token_nll": token_nll(model, exs), "de_acc": de, "uei_acc": uei,
                  "rei_acc": rei, "seconds": round(elapsed, 1)}, indent=1))
