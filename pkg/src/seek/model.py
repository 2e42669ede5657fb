"""Full forward pass: encoding, emotion flow, knowledge selection, decoding, losses."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import numeric as nm
from .config import Ablation, ModelConfig, model_config_from_dict, to_dict
from .corpus import (PAD_ID, Dialogue, Role, Utterance, Vocabulary, dialogue_state_ids, tokenize_target,
                     tokenize_utterance)
from .encoder_flow import (FlowState, encode_knowledge_batch, encode_utterances, fuse_and_flow, init_flow_params,
                           predict_response_ei, recognize_dialogue_emotion, tag_utterances)
from .generator import (DecodeOutput, SelectionTrace, decode_train, face_loss, flatten_memory, greedy_decode,
                        init_generator_params, make_sos, select_knowledge, total_loss)
from .knowledge import KnowledgeProvider, assemble
from .layers import init_transformer_params
from .numeric import ParameterSet, Tensor

LOSS_TERMS = ("nll", "emo", "pre", "dia", "div")


@dataclass
class Example:
    """One dialogue as padded id arrays."""

    dialogue_id: str
    ctx_ids: np.ndarray  # (n, L) starting with CLS
    ctx_mask: np.ndarray
    states: np.ndarray  # (n,)
    know_ids: np.ndarray  # (n, L_s)
    know_mask: np.ndarray
    target_ids: np.ndarray  # (T,) ending with EOS
    ei: np.ndarray  # (n,)
    ei_target: int
    emotion: int

    @property
    def n_context(self) -> int:
        return self.ctx_ids.shape[0]

    def with_padding(self, ctx_extra: int = 0, know_extra: int = 0) -> "Example":
        """Copy with extra masked PAD columns appended."""
        def pad(ids, mask, k):
            if k == 0:
                return ids, mask
            return (np.pad(ids, ((0, 0), (0, k)), constant_values=PAD_ID),
                    np.pad(mask, ((0, 0), (0, k)), constant_values=False))

        ci, cm = pad(self.ctx_ids, self.ctx_mask, ctx_extra)
        ki, km = pad(self.know_ids, self.know_mask, know_extra)
        return replace(self, ctx_ids=ci, ctx_mask=cm, know_ids=ki, know_mask=km)


def _encode_context(ctx, vocab: Vocabulary, provider: KnowledgeProvider, cfg: ModelConfig) -> dict:
    seqs = [tokenize_utterance(u.text, vocab, cfg.L_n) for u in ctx]
    L = max(len(s) for s in seqs)
    seqs = [s.padded(L) for s in seqs]
    bundles = [assemble(u.text, provider, vocab, cfg.L_s).tokens for u in ctx]
    return dict(
        ctx_ids=np.array([s.ids for s in seqs]),
        ctx_mask=np.array([s.mask for s in seqs]),
        states=np.array([0 if u.role == Role.SPEAKER else 1 for u in ctx]),
        know_ids=np.array([b.ids for b in bundles]),
        know_mask=np.array([b.mask for b in bundles]),
        ei=np.array([u.ei_label for u in ctx]),
    )


def prepare(dialogue: Dialogue, vocab: Vocabulary, provider: KnowledgeProvider, cfg: ModelConfig) -> Example:
    arrays = _encode_context(dialogue.context, vocab, provider, cfg)
    assert arrays["states"].tolist() == dialogue_state_ids(dialogue)
    target = np.array(tokenize_target(dialogue.target.text, vocab, cfg.L_n).ids)
    return Example(dialogue_id=dialogue.id, target_ids=target, ei_target=dialogue.target.ei_label,
                   emotion=dialogue.dialogue_emotion, **arrays)


def prepare_context(dialogue_id: str, utterances: Sequence[Utterance], vocab: Vocabulary,
                    provider: KnowledgeProvider, cfg: ModelConfig) -> Example:
    """Example for generation only: every utterance is context, no gold response."""
    arrays = _encode_context(utterances, vocab, provider, cfg)
    return Example(dialogue_id=dialogue_id, target_ids=np.zeros(0, dtype=np.int64), ei_target=0, emotion=0,
                   **arrays)


def init_params(cfg: ModelConfig, vocab_size: int, seed: int = 0) -> ParameterSet:
    rng = np.random.default_rng(seed)
    p = ParameterSet()
    init_transformer_params(p, rng, cfg, vocab_size)
    init_flow_params(p, rng, cfg)
    init_generator_params(p, rng, cfg, vocab_size)
    return p


def knowledge_only_params(p: ParameterSet) -> list[str]:
    """Parameters used only on the knowledge-selection path."""
    return [n for n in p.names() if n.startswith("sel.")]


@dataclass
class Output:
    losses: dict[str, Tensor | None]
    total: Tensor
    P_tag: Tensor
    P_pre: Tensor
    P_dia: Tensor
    flow: FlowState
    trace: SelectionTrace | None = None
    step_nll: Tensor | None = None
    logits: Tensor | None = None
    extras: dict = field(default_factory=dict)


def perceive(p: ParameterSet, cfg: ModelConfig, ex: Example, ablation: Ablation | None = None):
    """Encoder + emotion flow + the three heads (no decoding)."""
    ab = ablation or Ablation()
    U, H = encode_utterances(p, cfg, ex.ctx_ids, ex.ctx_mask, ex.states)
    if ab.no_knowledge:
        K, HK = nm.Tensor(np.zeros_like(U.data)), None
    else:
        K, HK = encode_knowledge_batch(p, cfg, ex.know_ids, ex.know_mask)
    U_hat = fuse_and_flow(U, K, p)
    P_tag, L_emo = tag_utterances(U_hat, ex.ei, p)
    h_pre, P_pre, L_pre, w_pre = predict_response_ei(U_hat, p, ex.ei_target)
    h_dia, P_dia, L_dia, w_dia = recognize_dialogue_emotion(U_hat, p, ex.emotion)
    flow = FlowState(U=U, K=None if ab.no_knowledge else K, U_hat=U_hat, h_pre=h_pre, h_dia=h_dia,
                     token_states=H, token_mask=ex.ctx_mask, know_states=HK,
                     know_mask=None if ab.no_knowledge else ex.know_mask,
                     pre_weights=w_pre, dia_weights=w_dia)
    return flow, (P_tag, L_emo), (P_pre, L_pre), (P_dia, L_dia)


def harmonized_knowledge(p: ParameterSet, cfg: ModelConfig, flow: FlowState, ab: Ablation):
    d = cfg.d
    if ab.no_knowledge:
        return nm.Tensor(np.zeros(d)), None
    if ab.no_emotion_harmonization:
        mem = nm.reshape(flow.know_states, (-1, d))
        return nm.masked_mean(mem, flow.know_mask.reshape(-1)), None
    return select_knowledge(flow.U_hat, flow.know_states, flow.know_mask, p, cfg)


def sos_vector(p: ParameterSet, cfg: ModelConfig, flow: FlowState, ab: Ablation):
    S, trace = harmonized_knowledge(p, cfg, flow, ab)
    h = nm.Tensor(np.zeros(2 * cfg.d)) if ab.no_response_prediction else flow.h_pre
    return make_sos(S, h, p), trace


def forward(p: ParameterSet, cfg: ModelConfig, ex: Example, face_w=None, ablation: Ablation | None = None,
            alpha=1.0, beta=1.0, gamma=1.5) -> Output:
    ab = ablation or Ablation()
    flow, (P_tag, L_emo), (P_pre, L_pre), (P_dia, L_dia) = perceive(p, cfg, ex, ab)
    sos, trace = sos_vector(p, cfg, flow, ab)
    L_nll, step_nll, logits = decode_train(flow.token_states, flow.token_mask, sos, ex.target_ids, p, cfg)
    w = np.ones(logits.shape[-1]) if face_w is None else face_w
    L_div = face_loss(step_nll, ex.target_ids, w)
    losses = {"nll": L_nll, "emo": L_emo, "pre": L_pre, "dia": L_dia, "div": L_div}
    total = apply_ablation(ab, losses, alpha, beta, gamma)
    return Output(losses=losses, total=total, P_tag=P_tag, P_pre=P_pre, P_dia=P_dia, flow=flow,
                  trace=trace, step_nll=step_nll, logits=logits)


def effective_terms(ab: Ablation) -> dict[str, bool]:
    return {
        "nll": True,
        "emo": not ab.no_utter_tagging,
        "pre": not ab.no_response_prediction,
        "dia": True,
        "div": True,
    }


def apply_ablation(ab: Ablation, losses: dict, alpha=1.0, beta=1.0, gamma=1.5):
    """Total loss with the ablated terms removed."""
    keep = effective_terms(ab)
    kept = {k: (v if keep[k] else None) for k, v in losses.items()}
    return total_loss(kept["nll"], kept["emo"], kept["pre"], kept["dia"], kept["div"], alpha, beta, gamma)


class SeekModel:
    """Parameters plus the vocabulary and frequency weights they were trained with."""

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, params: ParameterSet | None = None, seed: int = 0,
                 face_w=None):
        self.cfg = cfg
        self.vocab = vocab
        self.params = params if params is not None else init_params(cfg, len(vocab), seed)
        self.face_w = np.ones(len(vocab)) if face_w is None else np.asarray(face_w, dtype=float)

    def forward(self, ex: Example, ablation=None, alpha=1.0, beta=1.0, gamma=1.5) -> Output:
        return forward(self.params, self.cfg, ex, self.face_w, ablation, alpha, beta, gamma)

    def generate(self, ex: Example, ablation=None, max_steps=None) -> tuple[DecodeOutput, int, SelectionTrace | None]:
        """Greedy response, the predicted response emotion-intent, and the selection trace."""
        ab = ablation or Ablation()
        with nm.no_grad():
            flow, _, (P_pre, _), _ = perceive(self.params, self.cfg, ex, ab)
            sos, trace = sos_vector(self.params, self.cfg, flow, ab)
            mem, mem_mask = flatten_memory(flow.token_states, flow.token_mask)
            out = greedy_decode(self.params, self.cfg, sos, mem, mem_mask, max_steps)
        return out, int(np.argmax(P_pre.data)), trace

    def response_text(self, out: DecodeOutput) -> str:
        return " ".join(self.vocab.decode(out.token_ids))

    def save(self, path, extra: dict | None = None):
        nm.save_params(path, self.params)
        meta = {"model": to_dict(self.cfg), "vocab": self.vocab.itos, "freq": self.vocab.freq,
                "face_weights": self.face_w.tolist()}
        meta.update(extra or {})
        with open(f"{path}.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=1)

    @classmethod
    def load(cls, path) -> "SeekModel":
        with open(f"{path}.json", encoding="utf-8") as fh:
            meta = json.load(fh)
        cfg = model_config_from_dict(meta["model"])
        vocab = Vocabulary(meta["vocab"], meta.get("freq", {}))
        params = init_params(cfg, len(vocab))
        params.load_state(nm.load_params(path))
        model = cls(cfg, vocab, params, face_w=meta.get("face_weights"))
        model.meta = meta
        return model


def prepare_all(dialogues: Sequence[Dialogue], vocab, provider, cfg) -> list[Example]:
    return [prepare(d, vocab, provider, cfg) for d in dialogues]
