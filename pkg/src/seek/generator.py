"""Emotion-harmonised knowledge selection, [SOS] synthesis, decoding and losses."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .config import ModelConfig
from .corpus import EOS_ID, SPECIALS, Vocabulary
from .errors import EmptyFrequencyTable, LengthExceeded, MaskAllFalse, NonFinite
from .layers import (add_attention, add_ffn, add_layer_norm, add_linear, attention, causal_mask, ffn,
                     key_mask, layer_norm, lin)
from .numeric import ParameterSet, Tensor


@dataclass
class SelectionTrace:
    """Cross-attention weights, one (heads, n_queries, n_knowledge_tokens) array per layer."""

    layers: list[np.ndarray] = field(default_factory=list)
    knowledge_mask: np.ndarray | None = None

    def rows(self, dialogue_id: str):
        for l, w in enumerate(self.layers):
            for h in range(w.shape[0]):
                yield {"dialogue_id": dialogue_id, "layer": l, "head": h, "weights": w[h].tolist()}


def write_traces(path, traces) -> int:
    """Write ``(dialogue_id, SelectionTrace)`` pairs as JSON lines."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for dialogue_id, trace in traces:
            for row in trace.rows(dialogue_id):
                fh.write(json.dumps(row) + "\n")
                n += 1
    return n


def read_traces(path) -> dict[str, SelectionTrace]:
    grouped: dict[str, dict[int, dict[int, list]]] = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            if raw.strip():
                rec = json.loads(raw)
                grouped.setdefault(rec["dialogue_id"], {}).setdefault(rec["layer"], {})[rec["head"]] = rec["weights"]
    out = {}
    for did, layers in grouped.items():
        out[did] = SelectionTrace(
            [np.array([heads[h] for h in sorted(heads)], dtype=float) for _, heads in sorted(layers.items())]
        )
    return out


@dataclass
class DecodeOutput:
    token_ids: list[int]
    logits: list[np.ndarray]
    nll: list[float]

    @property
    def steps(self) -> int:
        return len(self.logits)


def init_generator_params(p: ParameterSet, rng, cfg: ModelConfig, vocab_size: int):
    d = cfg.d
    add_linear(p, rng, "sel.query", 2 * d, d)
    for l in range(cfg.s):
        add_attention(p, rng, f"sel.{l}.attn", d)
        add_layer_norm(p, f"sel.{l}.ln1", d)
        add_ffn(p, rng, f"sel.{l}.ff", d, cfg.ff)
        add_layer_norm(p, f"sel.{l}.ln2", d)
    add_linear(p, rng, "gen.wk", 3 * d, d, bias=False)
    for l in range(cfg.layers):
        add_attention(p, rng, f"dec.{l}.self", d)
        add_layer_norm(p, f"dec.{l}.ln1", d)
        add_attention(p, rng, f"dec.{l}.cross", d)
        add_layer_norm(p, f"dec.{l}.ln2", d)
        add_ffn(p, rng, f"dec.{l}.ff", d, cfg.ff)
        add_layer_norm(p, f"dec.{l}.ln3", d)
    add_linear(p, rng, "out", d, vocab_size)


def select_knowledge(U_hat: Tensor, know_states: Tensor, know_mask, p: ParameterSet, cfg: ModelConfig):
    """s cross-attention layers, queries from U_hat, keys/values from all knowledge tokens.

    ``know_states`` is (n, L_s, d) or already flattened (M, d). Returns S (d,)
    pooled over the n query rows, and the attention trace.
    """
    know_mask = np.asarray(know_mask, dtype=bool)
    mem = know_states if know_states.ndim == 2 else nm.reshape(know_states, (-1, know_states.shape[-1]))
    flat_mask = know_mask.reshape(-1)
    if not flat_mask.any():
        raise MaskAllFalse("no real knowledge tokens to attend to")
    am = key_mask(flat_mask)
    x = lin(p, "sel.query", U_hat)
    trace = SelectionTrace(knowledge_mask=flat_mask)
    for l in range(cfg.s):
        a, probs = attention(p, f"sel.{l}.attn", cfg.heads, x, mem, am)
        trace.layers.append(probs.data)
        x = layer_norm(p, f"sel.{l}.ln1", x + a)
        x = layer_norm(p, f"sel.{l}.ln2", x + ffn(p, f"sel.{l}.ff", x))
    return nm.masked_mean(x, np.ones(x.shape[0], dtype=bool)), trace


def make_sos(S: Tensor, h_pre: Tensor, p: ParameterSet) -> Tensor:
    """W_k [S ; h_pre]: a 3d -> d linear map without bias."""
    return lin(p, "gen.wk", nm.concat([S, h_pre]))


def _decoder(p: ParameterSet, cfg: ModelConfig, sos: Tensor, prev_ids, memory: Tensor, mem_mask) -> Tensor:
    T = 1 + len(prev_ids)
    if T > cfg.n_positions:
        raise LengthExceeded(f"decoder length {T} exceeds {cfg.n_positions} positions")
    x = nm.reshape(sos, (1, -1))
    if len(prev_ids):
        x = nm.concat([x, nm.embedding(p["emb.word"], np.asarray(prev_ids))], axis=0)
    x = x + nm.embedding(p["emb.pos"], np.arange(T))
    self_mask = causal_mask(T)
    mem_am = nm.additive_mask(mem_mask)
    for l in range(cfg.layers):
        a, _ = attention(p, f"dec.{l}.self", cfg.heads, x, x, self_mask)
        x = layer_norm(p, f"dec.{l}.ln1", x + a)
        a, _ = attention(p, f"dec.{l}.cross", cfg.heads, x, memory, mem_am)
        x = layer_norm(p, f"dec.{l}.ln2", x + a)
        x = layer_norm(p, f"dec.{l}.ln3", x + ffn(p, f"dec.{l}.ff", x))
    return lin(p, "out", x)


def flatten_memory(token_states: Tensor, token_mask):
    mem = nm.reshape(token_states, (-1, token_states.shape[-1]))
    return mem, np.asarray(token_mask, dtype=bool).reshape(-1)


def decode_train(token_states: Tensor, token_mask, sos: Tensor, target_ids, p: ParameterSet, cfg: ModelConfig):
    """Teacher-forced decoding; returns (L_nll, per-step NLL vector, logits (T, V))."""
    target_ids = np.asarray(target_ids, dtype=np.int64)
    if target_ids.size < 1:
        raise ValueError("target must contain at least one token")
    mem, mem_mask = flatten_memory(token_states, token_mask)
    logits = _decoder(p, cfg, sos, target_ids[:-1], mem, mem_mask)
    nll = nm.cross_entropy(logits, target_ids)
    return nm.tsum(nll), nll, logits


def face_loss(step_nll: Tensor, target_ids, freq_weights) -> Tensor:
    """Frequency-weighted NLL: -sum_t w[y_t] log P(y_t | ...)."""
    w = np.asarray(freq_weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("frequency weights must be non-negative")
    return nm.tsum(nm.mul(step_nll, w[np.asarray(target_ids, dtype=np.int64)]))


def face_loss_from_logits(logits, target_ids, freq_weights) -> Tensor:
    return face_loss(nm.cross_entropy(nm.as_tensor(logits), target_ids), target_ids, freq_weights)


def face_weights(vocab: Vocabulary) -> np.ndarray:
    """Static frequency weights over the vocabulary.

    RF_i = f_i / sum f; raw_i = 1 - RF_i / max RF, shifted so the mean over
    in-vocab tokens is 1. Specials keep weight 1. Result lies in [0, 2].
    """
    toks = [t for t in vocab.itos if t not in SPECIALS]
    freqs = np.array([vocab.frequency(t) for t in toks], dtype=float)
    if not toks or freqs.sum() <= 0:
        raise EmptyFrequencyTable("no token frequencies to weight")
    rf = freqs / freqs.sum()
    raw = 1.0 - rf / rf.max()
    w = np.ones(len(vocab))
    w[len(SPECIALS):] = np.clip(raw - raw.mean() + 1.0, 0.0, 2.0)
    return w


def total_loss(L_nll, L_emo, L_pre, L_dia, L_div, alpha=1.0, beta=1.0, gamma=1.5):
    """alpha * L_nll + beta * (L_emo + L_pre + L_dia) + gamma * L_div.

    Components may be Tensors, floats, or None (term removed).
    """
    terms = [t for t in (L_nll, L_emo, L_pre, L_dia, L_div) if t is not None]
    for t in terms:
        v = t.data if isinstance(t, Tensor) else np.asarray(t)
        if not np.all(np.isfinite(v)):
            raise NonFinite("loss component is not finite")
    tensor_mode = any(isinstance(t, Tensor) for t in terms)

    def weighted(x, c):
        if x is None:
            return None
        return nm.scale(x, c) if isinstance(x, Tensor) else c * x

    cls = [t for t in (L_emo, L_pre, L_dia) if t is not None]
    L_cls = None
    for t in cls:
        L_cls = t if L_cls is None else L_cls + t
    parts = [weighted(L_nll, alpha), weighted(L_cls, beta), weighted(L_div, gamma)]
    out = None
    for part in parts:
        if part is not None:
            out = part if out is None else out + part
    if out is None:
        return nm.Tensor(0.0) if tensor_mode else 0.0
    return out


def greedy_decode(p: ParameterSet, cfg: ModelConfig, sos: Tensor, memory: Tensor, mem_mask, max_steps=None) -> DecodeOutput:
    max_steps = cfg.max_decode if max_steps is None else max_steps
    out = DecodeOutput([], [], [])
    with nm.no_grad():
        for _ in range(max_steps):
            logits = _decoder(p, cfg, sos, out.token_ids, memory, mem_mask).data[-1]
            tok = int(np.argmax(logits))
            out.logits.append(logits)
            out.nll.append(float(-nm.log_softmax_values(logits)[tok]))
            if tok == EOS_ID:
                break
            out.token_ids.append(tok)
    return out


def check_distribution(probs, axis=-1, atol=1e-9) -> bool:
    probs = np.asarray(probs)
    return bool(np.all(probs >= 0) and np.allclose(probs.sum(axis=axis), 1.0, rtol=0, atol=atol))

