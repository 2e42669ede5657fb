"""Train the full model and each single-switch ablation on one synthetic split.

Prints one metrics row per variant. At desk scale the numbers only show that
every variant trains and evaluates; they say nothing about full-corpus rankings.
"""

import argparse
import json

from seek.config import ABLATION_LABELS, ABLATIONS, Ablation, ModelConfig, TrainConfig
from seek.generator import face_weights
from seek.metrics import evaluate
from seek.model import SeekModel, prepare_all
from seek.synthetic import desk_setup
from seek.trainer import train

ap = argparse.ArgumentParser()
ap.add_argument("--dialogues", type=int, default=60)
ap.add_argument("--epochs", type=int, default=15)
ap.add_argument("--d", type=int, default=16)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--out", help="optional JSON file for the rows")
args = ap.parse_args()

cfg = ModelConfig(d=args.d, layers=1, heads=2, L_n=12, L_s=40, max_decode=12)
dialogues, vocab, provider = desk_setup(50, args.dialogues, seed=args.seed, n_utterances=(2, 5))
cut = len(dialogues) * 4 // 5
train_set = prepare_all(dialogues[:cut], vocab, provider, cfg)
test_set = prepare_all(dialogues[cut:], vocab, provider, cfg)

rows = []
for flag in (None,) + ABLATIONS:
    ab = Ablation(**({flag: True} if flag else {}))
    model = SeekModel(cfg, vocab, seed=args.seed, face_w=face_weights(vocab))
    tcfg = TrainConfig(batch_size=8, warmup_steps=40, max_epochs=args.epochs, patience=args.epochs,
                       seed=args.seed, ablation=ab)
    train(model, train_set, tcfg)
    rep = evaluate(model, test_set, ab)
    rows.append({"variant": ABLATION_LABELS[flag] if flag else "full", **rep.to_dict()})
    r = rows[-1]
    print(f"{r['variant']:10s} ppl {r['ppl']:8.2f}  dist1 {r['dist1']:.3f}  dist2 {r['dist2']:.3f}  "
          f"de {r['de_acc']:.3f}  uei {r['uei_acc']:.3f}  rei {r['rei_acc']:.3f}")

if args.out:
    with open(args.out, "w") as fh:
        json.dump(rows, fh, indent=1)
