"""Command-line entry point: ``seek <command> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import numeric as nm
from .config import Ablation, ModelConfig, load_config
from .corpus import SEP, build_vocab, load_contexts, load_corpus, tokenize
from .errors import BadFlag, SeekError, UnknownCommand
from .generator import face_weights, write_traces
from .knowledge import RELATIONS, TemplateProvider, load_precomputed, write_precomputed
from .metrics import evaluate
from .model import SeekModel, forward, init_params, prepare, prepare_all, prepare_context
from .synthetic import desk_setup
from .trainer import train

COMMANDS = ("train", "eval", "generate", "gradcheck", "prep-knowledge", "export-attn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise BadFlag(message)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--checkpoint", help="parameter checkpoint (sidecar at PATH.json)")
    p.add_argument("--corpus", help="JSON-lines dialogue corpus")
    p.add_argument("--knowledge", help="precomputed knowledge JSON lines; template provider when omitted")
    p.add_argument("--out", help="output path (directory for train)")
    p.add_argument("--seed", type=int)
    p.add_argument("--ablate", help="comma-separated ablation switches")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seek", description="Emotion-flow empathetic dialogue model at desk scale.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    p = sub.add_parser("train", help="train a model; writes checkpoint and history")
    _common(p)
    p.add_argument("--valid", help="validation corpus for early stopping")
    p = sub.add_parser("eval", help="write an EvalReport JSON")
    _common(p)
    p = sub.add_parser("generate", help="greedy responses for context dialogues")
    _common(p)
    p.add_argument("--input", help="JSON-lines contexts (every utterance is context)")
    p.add_argument("--max-steps", type=int)
    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss on a synthetic dialogue")
    _common(p)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--vocab", type=int, default=30)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--ls", type=int, default=40)
    p.add_argument("--utterances", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p = sub.add_parser("prep-knowledge", help="precompute template knowledge for a corpus")
    _common(p)
    p = sub.add_parser("export-attn", help="export knowledge-selection attention as JSON lines")
    _common(p)
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise BadFlag(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if args.ablate:
        out["ablate"] = args.ablate
    return out


def _require(args, *names):
    for n in names:
        if not getattr(args, n.replace("-", "_"), None):
            raise BadFlag(f"{args.command} requires --{n}")


def _provider(args):
    return load_precomputed(args.knowledge, fallback=True) if args.knowledge else TemplateProvider()


def _load_model(args):
    model = SeekModel.load(args.checkpoint)
    ab = Ablation(**model.meta.get("train", {}).get("ablation", {}))
    if args.ablate:
        ab = Ablation.parse(args.ablate)
    return model, ab


def _write_json(path, obj):
    text = json.dumps(obj, indent=1)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_train(args) -> int:
    _require(args, "corpus", "out")
    mcfg, tcfg = load_config(args.config, _overrides(args))
    dialogues = load_corpus(args.corpus)
    valid = load_corpus(args.valid) if args.valid else None
    provider = _provider(args)
    extra = [SEP]
    for d in dialogues + (valid or []):
        for u in d.context:
            for rel in RELATIONS:
                for inf in provider.generate(u.text, rel):
                    extra.extend(tokenize(inf))
    vocab = build_vocab(dialogues, tcfg.min_freq, extra)
    model = SeekModel(mcfg, vocab, seed=tcfg.seed, face_w=face_weights(vocab))
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "model.ckpt")
    res = train(model, prepare_all(dialogues, vocab, provider, mcfg), tcfg,
                prepare_all(valid, vocab, provider, mcfg) if valid else None, checkpoint=ckpt)
    vocab.save(os.path.join(args.out, "vocab.txt"))
    _write_json(os.path.join(args.out, "history.json"),
                {"valid_loss": res.history, "train_loss": res.train_history, "steps": res.steps,
                 "best_epoch": res.best_epoch, "stopped_early": res.stopped_early, "lr": res.lr_trace})
    print(f"trained {res.steps} steps; checkpoint {ckpt}")
    return 0


def cmd_eval(args) -> int:
    _require(args, "checkpoint", "corpus")
    model, ab = _load_model(args)
    examples = prepare_all(load_corpus(args.corpus), model.vocab, _provider(args), model.cfg)
    report = evaluate(model, examples, ab)
    _write_json(args.out, report.to_dict())
    return 0


def cmd_generate(args) -> int:
    _require(args, "checkpoint", "input")
    model, ab = _load_model(args)
    provider = _provider(args)
    lines = []
    for did, utts in load_contexts(args.input):
        ex = prepare_context(did, utts, model.vocab, provider, model.cfg)
        out, pred_ei, _ = model.generate(ex, ab, args.max_steps)
        lines.append(json.dumps({"dialogue_id": did, "response": model.response_text(out), "pred_ei": pred_ei}))
    text = "".join(line + "\n" for line in lines)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    cfg = ModelConfig(d=args.d, layers=args.layers, heads=args.heads, L_n=16, L_s=args.ls)
    dialogues, vocab, provider = desk_setup(args.vocab, 1, seed, n_utterances=(args.utterances, args.utterances))
    ex = prepare(dialogues[0], vocab, provider, cfg)
    params = init_params(cfg, len(vocab), seed)
    fw = face_weights(vocab)
    ab = Ablation.parse(args.ablate)
    start = time.perf_counter()
    report = nm.grad_check(lambda: forward(params, cfg, ex, fw, ab).total, params, args.eps, args.tol)
    elapsed = time.perf_counter() - start
    text = report.summary() + f"\n{len(params)} parameters, {elapsed:.1f} s"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0 if report.passed else 1


def cmd_prep_knowledge(args) -> int:
    _require(args, "corpus", "out")
    dialogues = load_corpus(args.corpus)
    texts = [u.text for d in dialogues for u in d.utterances]
    n = write_precomputed(args.out, texts, TemplateProvider())
    print(f"wrote {n} knowledge records to {args.out}")
    return 0


def cmd_export_attn(args) -> int:
    _require(args, "checkpoint", "corpus", "out")
    model, ab = _load_model(args)
    if ab.no_knowledge or ab.no_emotion_harmonization:
        raise BadFlag("the selected ablation bypasses knowledge selection; no attention to export")
    provider = _provider(args)
    traces = []
    for d in load_corpus(args.corpus):
        ex = prepare(d, model.vocab, provider, model.cfg)
        _, _, trace = model.generate(ex, ab, max_steps=0)
        traces.append((d.id, trace))
    n = write_traces(args.out, traces)
    print(f"wrote {n} attention rows to {args.out}")
    return 0


HANDLERS = {
    "train": cmd_train, "eval": cmd_eval, "generate": cmd_generate, "gradcheck": cmd_gradcheck,
    "prep-knowledge": cmd_prep_knowledge, "export-attn": cmd_export_attn,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv or argv[0] in ("-h", "--help"):
            build_parser().print_help()
            return 0 if argv else 2
        if argv[0] not in COMMANDS:
            raise UnknownCommand(f"unknown command {argv[0]!r}; choose from {', '.join(COMMANDS)}")
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return HANDLERS[args.command](args)
    except (UnknownCommand, BadFlag) as exc:
        print(f"seek: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except SeekError as exc:
        print(f"seek: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
