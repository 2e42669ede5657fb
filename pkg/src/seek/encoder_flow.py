"""Utterance/knowledge encoding, BiLSTM emotion flow, and the three emotion heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .config import ModelConfig
from .corpus import CLS_ID, TokenSeq
from .errors import LabelOutOfRange, LengthExceeded, LengthMismatch
from .layers import add_linear, encoder_stack, lin, xavier
from .numeric import ParameterSet, Tensor


@dataclass
class FlowState:
    U: Tensor  # (n, d) [CLS] states
    K: Tensor | None  # (n, d) pooled knowledge, None when knowledge is ablated
    U_hat: Tensor  # (n, 2d)
    h_pre: Tensor  # (2d,)
    h_dia: Tensor  # (2d,)
    token_states: Tensor  # (n, L, d) decoder memory
    token_mask: np.ndarray  # (n, L)
    know_states: Tensor | None = None  # (n, L_s, d)
    know_mask: np.ndarray | None = None
    pre_weights: Tensor | None = None
    dia_weights: Tensor | None = None


def init_flow_params(p: ParameterSet, rng, cfg: ModelConfig):
    d = cfg.d
    add_linear(p, rng, "flow.wa", 2 * d, d, bias=False)
    for direction in ("fw", "bw"):
        p.add(f"flow.lstm.{direction}.wx", xavier(rng, d, 4 * d))
        p.add(f"flow.lstm.{direction}.wh", xavier(rng, d, 4 * d))
        p.add(f"flow.lstm.{direction}.b", np.zeros(4 * d))
    add_linear(p, rng, "head.tag", 2 * d, cfg.t, bias=False)
    for head, n_out in (("pre", cfg.t), ("dia", cfg.q)):
        add_linear(p, rng, f"head.{head}.att", 2 * d, d)
        p.add(f"head.{head}.att.v", xavier(rng, d, 1, shape=(d,)))
        add_linear(p, rng, f"head.{head}", 2 * d, n_out, bias=False)


def embed(p: ParameterSet, cfg: ModelConfig, ids, states=None) -> Tensor:
    """Word + positional (+ dialogue-state) embedding sum for (..., L) ids."""
    ids = np.asarray(ids)
    L = ids.shape[-1]
    if L > cfg.n_positions:
        raise LengthExceeded(f"sequence length {L} exceeds {cfg.n_positions} positions")
    x = nm.embedding(p["emb.word"], ids) + nm.embedding(p["emb.pos"], np.arange(L))
    if states is not None:
        x = x + nm.embedding(p["emb.state"], np.asarray(states))[..., None, :]
    return x


def encode_utterances(p: ParameterSet, cfg: ModelConfig, ids, mask, states):
    """Batched utterance encoding: returns U (n, d) and token states (n, L, d)."""
    ids = np.asarray(ids)
    if np.any(ids[:, 0] != CLS_ID):
        raise ValueError("every utterance must start with the [CLS] id")
    H = encoder_stack(p, cfg, embed(p, cfg, ids, states), mask)
    return nm.getitem(H, (slice(None), 0)), H


def encode_utterance(tokens: TokenSeq, state: int, p: ParameterSet, cfg: ModelConfig):
    U, H = encode_utterances(p, cfg, np.array([tokens.ids]), np.array([tokens.mask]), np.array([state]))
    return U[0], H[0]


def encode_knowledge_batch(p: ParameterSet, cfg: ModelConfig, ids, mask):
    """Shared encoder over knowledge text; K = masked mean of token states."""
    H = encoder_stack(p, cfg, embed(p, cfg, ids), mask)
    return nm.masked_mean(H, mask), H


def encode_knowledge(tokens: TokenSeq, p: ParameterSet, cfg: ModelConfig):
    K, H = encode_knowledge_batch(p, cfg, np.array([tokens.ids]), np.array([tokens.mask]))
    return K[0], H[0]


def _lstm_direction(p: ParameterSet, prefix: str, X: Tensor, order) -> list:
    d = X.shape[-1]
    XW = nm.linear(X, p[f"{prefix}.wx"], p[f"{prefix}.b"])
    h = c = None
    outs = [None] * X.shape[0]
    for t in order:
        gates = XW[t] if h is None else XW[t] + nm.linear(h, p[f"{prefix}.wh"])
        sg, tg = nm.sigmoid(gates), nm.tanh(gates)
        i, f, g, o = sg[0:d], sg[d : 2 * d], tg[2 * d : 3 * d], sg[3 * d : 4 * d]
        c = i * g if c is None else f * c + i * g
        h = o * nm.tanh(c)
        outs[t] = h
    return outs


def bilstm(p: ParameterSet, X: Tensor) -> Tensor:
    """Zero-initialised BiLSTM; row i is [forward_i ; backward_i]."""
    n = X.shape[0]
    fw = _lstm_direction(p, "flow.lstm.fw", X, range(n))
    bw = _lstm_direction(p, "flow.lstm.bw", X, range(n - 1, -1, -1))
    return nm.concat([nm.stack(fw), nm.stack(bw)], axis=-1)


def fuse_and_flow(U: Tensor, K: Tensor, p: ParameterSet) -> Tensor:
    if U.shape[0] != K.shape[0]:
        raise LengthMismatch(f"{U.shape[0]} utterances vs {K.shape[0]} knowledge vectors")
    if U.shape[0] < 1:
        raise LengthMismatch("empty context")
    a = nm.concat([U, K], axis=-1)
    return bilstm(p, lin(p, "flow.wa", a))


def _check_labels(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelOutOfRange(f"label outside [0, {n_classes})")
    return labels


def tag_utterances(U_hat: Tensor, labels, p: ParameterSet):
    """P_tag (n, 41) and L_emo summed over context utterances."""
    logits = lin(p, "head.tag", U_hat)
    labels = _check_labels(labels, logits.shape[-1])
    if len(labels) != U_hat.shape[0]:
        raise LengthMismatch("one label per context utterance required")
    return nm.softmax(logits), nm.tsum(nm.cross_entropy(logits, labels))


def attention_pool(p: ParameterSet, name: str, U_hat: Tensor):
    """Additive attention: score_i = v . tanh(W U_hat_i + b)."""
    scores = nm.matmul(nm.tanh(lin(p, name, U_hat)), p[f"{name}.v"])
    weights = nm.softmax(scores)
    return nm.matmul(weights, U_hat), weights


def _pooled_head(p: ParameterSet, head: str, U_hat: Tensor, gold):
    h, weights = attention_pool(p, f"head.{head}.att", U_hat)
    logits = lin(p, f"head.{head}", h)
    probs = nm.softmax(logits)
    loss = None
    if gold is not None:
        gold = _check_labels([gold], logits.shape[-1])
        loss = nm.tsum(nm.cross_entropy(nm.reshape(logits, (1, -1)), gold))
    return h, probs, loss, weights


def predict_response_ei(U_hat: Tensor, p: ParameterSet, gold=None):
    """(h_pre, P_pre, L_pre, attention weights); L_pre is None without a gold label."""
    return _pooled_head(p, "pre", U_hat, gold)


def recognize_dialogue_emotion(U_hat: Tensor, p: ParameterSet, gold=None):
    """(h_dia, P_dia, L_dia, attention weights)."""
    return _pooled_head(p, "dia", U_hat, gold)
