"""Parameter initialisation and transformer blocks shared by encoder, selector and decoder."""

from __future__ import annotations

import math

import numpy as np

from . import numeric as nm
from .config import ModelConfig
from .numeric import ParameterSet, Tensor


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def add_linear(p: ParameterSet, rng, name: str, n_in: int, n_out: int, bias=True):
    p.add(f"{name}.w", xavier(rng, n_in, n_out))
    if bias:
        p.add(f"{name}.b", np.zeros(n_out))


def add_layer_norm(p: ParameterSet, name: str, d: int):
    p.add(f"{name}.g", np.ones(d))
    p.add(f"{name}.b", np.zeros(d))


def add_attention(p: ParameterSet, rng, name: str, d: int, d_query: int | None = None):
    add_linear(p, rng, f"{name}.q", d_query or d, d)
    # a key bias shifts every score in a row equally, so softmax ignores it
    add_linear(p, rng, f"{name}.k", d, d, bias=False)
    add_linear(p, rng, f"{name}.v", d, d)
    add_linear(p, rng, f"{name}.o", d, d)


def add_ffn(p: ParameterSet, rng, name: str, d: int, ff: int):
    add_linear(p, rng, f"{name}.1", d, ff)
    add_linear(p, rng, f"{name}.2", ff, d)


def lin(p: ParameterSet, name: str, x: Tensor) -> Tensor:
    b = f"{name}.b"
    return nm.linear(x, p[f"{name}.w"], p[b] if b in p else None)


def layer_norm(p: ParameterSet, name: str, x: Tensor) -> Tensor:
    return nm.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])


def ffn(p: ParameterSet, name: str, x: Tensor) -> Tensor:
    return lin(p, f"{name}.2", nm.relu(lin(p, f"{name}.1", x)))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, L, d = x.shape
    return nm.swapaxes(nm.reshape(x, (*lead, L, heads, d // heads)), -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, L, dh = x.shape
    return nm.reshape(nm.swapaxes(x, -2, -3), (*lead, L, h * dh))


def attention(p: ParameterSet, name: str, heads: int, query: Tensor, memory: Tensor, mask_add=None):
    """Multi-head scaled dot-product attention.

    ``mask_add`` is an additive constant broadcastable to (..., heads, Lq, Lk).
    Returns the projected output and the (..., heads, Lq, Lk) weights.
    """
    q = _split_heads(lin(p, f"{name}.q", query), heads)
    k = _split_heads(lin(p, f"{name}.k", memory), heads)
    v = _split_heads(lin(p, f"{name}.v", memory), heads)
    scores = nm.scale(nm.matmul(q, nm.swapaxes(k, -1, -2)), 1.0 / math.sqrt(q.shape[-1]))
    probs = nm.softmax(scores, mask_add)
    out = lin(p, f"{name}.o", _merge_heads(nm.matmul(probs, v)))
    return out, probs


def key_mask(mask) -> np.ndarray:
    """Additive mask shaped (..., 1, 1, Lk) from a (..., Lk) boolean key mask."""
    return nm.additive_mask(mask)[..., None, None, :]


def causal_mask(n: int) -> np.ndarray:
    return nm.additive_mask(np.tril(np.ones((n, n), dtype=bool)))


def init_transformer_params(p: ParameterSet, rng, cfg: ModelConfig, vocab_size: int):
    d = cfg.d
    p.add("emb.word", rng.uniform(-0.1, 0.1, size=(vocab_size, d)))
    p.add("emb.pos", rng.uniform(-0.1, 0.1, size=(cfg.n_positions, d)))
    p.add("emb.state", rng.uniform(-0.1, 0.1, size=(2, d)))
    for l in range(cfg.layers):
        add_attention(p, rng, f"enc.{l}.attn", d)
        add_layer_norm(p, f"enc.{l}.ln1", d)
        add_ffn(p, rng, f"enc.{l}.ff", d, cfg.ff)
        add_layer_norm(p, f"enc.{l}.ln2", d)


def encoder_stack(p: ParameterSet, cfg: ModelConfig, x: Tensor, mask) -> Tensor:
    am = key_mask(mask)
    for l in range(cfg.layers):
        a, _ = attention(p, f"enc.{l}.attn", cfg.heads, x, x, am)
        x = layer_norm(p, f"enc.{l}.ln1", x + a)
        x = layer_norm(p, f"enc.{l}.ln2", x + ffn(p, f"enc.{l}.ff", x))
    return x
