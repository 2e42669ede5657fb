"""Adam with the inverse-square-root warmup schedule, early stopping, checkpoints."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numeric as nm
from .config import TrainConfig, to_dict
from .errors import DivergedLoss, EmptyCorpus, NonFinite
from .model import Example, SeekModel

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.98)
ADAM_EPS = 1e-9


def lr_at(step: int, d: int, warmup: int, factor: float = 1.0) -> float:
    """factor * d^-0.5 * min(step^-0.5, step * warmup^-1.5)."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return factor * d ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def early_stop(history: Sequence[float], patience: int) -> bool:
    """True once ``patience`` evaluations have passed without beating the best."""
    if not history:
        raise ValueError("history must be non-empty")
    best = int(np.argmin(history))
    return len(history) - 1 - best >= patience


class Adam:
    def __init__(self, params: nm.ParameterSet, betas=ADAM_BETAS, eps=ADAM_EPS):
        self.params = [p for p in params if p.trainable]
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    history: list[float] = field(default_factory=list)  # per-epoch validation loss
    train_history: list[float] = field(default_factory=list)  # per-epoch mean training loss
    lr_trace: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    steps: int = 0
    best_epoch: int = -1
    stopped_early: bool = False


def batch_loss(model: SeekModel, batch: Sequence[Example], cfg: TrainConfig, backward=True) -> float:
    """Mean total loss over ``batch``; accumulates gradients when ``backward``."""
    total = 0.0
    for ex in batch:
        try:
            out = model.forward(ex, cfg.ablation, cfg.alpha, cfg.beta, cfg.gamma)
        except NonFinite as exc:
            raise DivergedLoss(f"non-finite loss term on dialogue {ex.dialogue_id}") from exc
        value = out.total.item()
        if not math.isfinite(value):
            raise DivergedLoss(f"non-finite loss on dialogue {ex.dialogue_id}")
        total += value
        if backward:
            nm.backward(nm.scale(out.total, 1.0 / len(batch)))
    return total / len(batch)


def mean_loss(model: SeekModel, examples: Sequence[Example], cfg: TrainConfig) -> float:
    with nm.no_grad():
        return batch_loss(model, examples, cfg, backward=False)


def _clip(params, max_norm):
    norm = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params))
    if norm > max_norm:
        for p in params:
            p.grad = p.grad * (max_norm / norm)


def train(model: SeekModel, train_set: Sequence[Example], cfg: TrainConfig,
          valid_set: Sequence[Example] | None = None, checkpoint: str | None = None) -> TrainResult:
    """Train in place; on return ``model.params`` hold the best checkpoint.

    Without a validation split the epoch's mean training loss drives
    checkpoint selection and early stopping.
    """
    if not train_set:
        raise EmptyCorpus("training split is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params)
    res = TrainResult()
    best_state, best = None, math.inf
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_set))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
            model.params.zero_grad()
            epoch_losses.append(batch_loss(model, batch, cfg))
            if cfg.clip_norm > 0:
                _clip(opt.params, cfg.clip_norm)
            step = opt.t + 1
            lr = lr_at(step, model.cfg.d, cfg.warmup_steps, cfg.lr_factor) if cfg.noam else cfg.base_lr
            opt.step(lr)
            res.lr_trace.append(lr)
            res.step_losses.append(epoch_losses[-1])
            if cfg.max_steps and opt.t >= cfg.max_steps:
                break
        res.steps = opt.t
        res.train_history.append(float(np.mean(epoch_losses)))
        score = mean_loss(model, valid_set, cfg) if valid_set else res.train_history[-1]
        if not math.isfinite(score):
            raise DivergedLoss(f"non-finite validation loss at epoch {epoch}")
        res.history.append(score)
        log.info("epoch %d step %d train %.4f valid %.4f", epoch, opt.t, res.train_history[-1], score)
        if score < best:
            best, best_state, res.best_epoch = score, model.params.state(), epoch
        if cfg.max_steps and opt.t >= cfg.max_steps:
            break
        if early_stop(res.history, cfg.patience):
            res.stopped_early = True
            break
    if best_state is not None:
        model.params.load_state(best_state)
    if checkpoint:
        model.save(checkpoint, {"train": to_dict(cfg), "step": res.steps, "history": res.history,
                                "best_epoch": res.best_epoch})
    return res
