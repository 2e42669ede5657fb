"""Automatic metrics: perplexity, Distinct-n, and the three emotion accuracies."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from . import numeric as nm
from .config import Ablation
from .errors import EmptyCorpus, NoNGrams
from .model import Example, SeekModel, perceive

# full-corpus values reported for the complete system; not reproducible at desk scale
REFERENCE = {"ppl": 37.09, "dist1": 0.73, "dist2": 3.23, "de_acc": 41.85, "uei_acc": 34.08, "rei_acc": 25.67}


@dataclass
class EvalReport:
    """Metric bundle written as JSON.

    dist1/dist2 and the accuracies are raw fractions in [0, 1]; published
    tables usually print them multiplied by 100.
    """

    ppl: float
    dist1: float
    dist2: float
    de_acc: float
    uei_acc: float
    rei_acc: float
    n_dialogues: int

    def to_dict(self) -> dict:
        return asdict(self)


def perplexity_from_logprobs(logprobs: Iterable[float]) -> float:
    """exp(mean negative log-probability of the gold tokens)."""
    lp = list(logprobs)
    if not lp:
        raise EmptyCorpus("no gold tokens")
    return math.exp(-math.fsum(lp) / len(lp))


def perplexity(model: SeekModel, examples: Sequence[Example], ablation: Ablation | None = None) -> float:
    """Teacher-forced corpus perplexity over every gold response token (EOS included)."""
    if not examples:
        raise EmptyCorpus("perplexity needs at least one dialogue")
    nll, count = [], 0
    with nm.no_grad():
        for ex in examples:
            out = model.forward(ex, ablation)
            nll.append(out.losses["nll"].item())
            count += len(ex.target_ids)
    return math.exp(math.fsum(nll) / count)


def token_nll(model: SeekModel, examples: Sequence[Example], ablation: Ablation | None = None) -> float:
    """Mean per-token NLL (log of perplexity)."""
    return math.log(perplexity(model, examples, ablation))


def ngrams(tokens: Sequence, n: int):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def dist_n(responses: Sequence[Sequence], n: int) -> float:
    """Distinct n-grams / total n-grams across all responses (corpus level)."""
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    seen, total = set(), 0
    for r in responses:
        grams = ngrams(list(r), n)
        seen.update(grams)
        total += len(grams)
    if total == 0:
        raise NoNGrams(f"no response has {n} or more tokens")
    return len(seen) / total


def accuracy_from_predictions(de_pred, de_gold, uei_pred, uei_gold, rei_pred, rei_gold):
    """(DE, UEI, REI) accuracy; UEI is micro-averaged over utterances."""
    def acc(pred, gold):
        pred, gold = np.asarray(pred).reshape(-1), np.asarray(gold).reshape(-1)
        return float((pred == gold).mean()) if gold.size else 0.0

    return acc(de_pred, de_gold), acc(uei_pred, uei_gold), acc(rei_pred, rei_gold)


def head_predictions(model: SeekModel, examples: Sequence[Example], ablation: Ablation | None = None):
    """Argmax predictions and gold labels for the three heads."""
    de_p, de_g, uei_p, uei_g, rei_p, rei_g = [], [], [], [], [], []
    with nm.no_grad():
        for ex in examples:
            _, (P_tag, _), (P_pre, _), (P_dia, _) = perceive(model.params, model.cfg, ex, ablation)
            de_p.append(int(np.argmax(P_dia.data)))
            de_g.append(ex.emotion)
            uei_p.extend(np.argmax(P_tag.data, axis=-1).tolist())
            uei_g.extend(ex.ei.tolist())
            rei_p.append(int(np.argmax(P_pre.data)))
            rei_g.append(ex.ei_target)
    return (de_p, de_g), (uei_p, uei_g), (rei_p, rei_g)


def accuracies(model: SeekModel, examples: Sequence[Example], ablation: Ablation | None = None):
    (a, b), (c, d), (e, f) = head_predictions(model, examples, ablation)
    return accuracy_from_predictions(a, b, c, d, e, f)


def evaluate(model: SeekModel, examples: Sequence[Example], ablation: Ablation | None = None,
             max_steps: int | None = None) -> EvalReport:
    if not examples:
        raise EmptyCorpus("evaluation corpus is empty")
    responses = [model.generate(ex, ablation, max_steps)[0].token_ids for ex in examples]

    def safe_dist(n):
        try:
            return dist_n(responses, n)
        except NoNGrams:
            return 0.0

    de, uei, rei = accuracies(model, examples, ablation)
    return EvalReport(ppl=perplexity(model, examples, ablation), dist1=safe_dist(1), dist2=safe_dist(2),
                      de_acc=de, uei_acc=uei, rei_acc=rei, n_dialogues=len(examples))
