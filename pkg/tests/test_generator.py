import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seek import generator as gen
from seek import numeric as nm
from seek.config import ModelConfig
from seek.corpus import EOS_ID, SPECIALS, Vocabulary
from seek.errors import EmptyFrequencyTable, LengthExceeded, MaskAllFalse, NonFinite
from seek.generator import (DecodeOutput, SelectionTrace, decode_train, face_loss, face_loss_from_logits,
                            face_weights, greedy_decode, make_sos, read_traces, select_knowledge, total_loss,
                            write_traces)
from seek.layers import attention, key_mask, lin
from seek.model import init_params

CFG = ModelConfig(d=8, layers=1, heads=2, L_n=12, L_s=40, max_decode=10)
V = 30


@pytest.fixture
def params():
    return init_params(CFG, V, seed=21)


def memory(rng, n=2, L=5):
    states = nm.Tensor(rng.normal(size=(n, L, CFG.d)))
    mask = np.ones((n, L), dtype=bool)
    mask[:, L - 2:] = False
    return states, mask


# ---------------------------------------------------------------- knowledge selection

def test_equal_values_give_that_value(params, rng):
    row = rng.normal(size=CFG.d)
    mem = nm.Tensor(np.tile(row, (7, 1)))
    out, _ = attention(params, "sel.0.attn", CFG.heads, nm.Tensor(rng.normal(size=(3, CFG.d))), mem,
                       key_mask(np.ones(7, bool)))
    v = lin(params, "sel.0.attn.o", lin(params, "sel.0.attn.v", nm.Tensor(row))).data
    np.testing.assert_allclose(out.data, np.tile(v, (3, 1)), rtol=0, atol=1e-12)


def test_single_real_token_takes_all_weight(params, rng):
    states = nm.Tensor(rng.normal(size=(2, 4, CFG.d)))
    mask = np.zeros((2, 4), dtype=bool)
    mask[1, 2] = True
    _, trace = select_knowledge(nm.Tensor(rng.normal(size=(3, 2 * CFG.d))), states, mask, params, CFG)
    for w in trace.layers:
        np.testing.assert_allclose(w[..., 6], 1.0, rtol=0, atol=1e-12)


@given(st.integers(0, 2**31), st.integers(1, 4))
def test_masked_knowledge_gets_no_weight(seed, n):
    p = init_params(CFG, V, seed=2)
    r = np.random.default_rng(seed)
    states = nm.Tensor(r.normal(size=(n, 6, CFG.d)))
    mask = r.random((n, 6)) < 0.5
    mask[0, 0] = True
    S, trace = select_knowledge(nm.Tensor(r.normal(size=(n, 2 * CFG.d))), states, mask, p, CFG)
    assert S.shape == (CFG.d,)
    assert len(trace.layers) == CFG.s
    flat = mask.reshape(-1)
    for w in trace.layers:
        assert w.shape == (CFG.heads, n, 6 * n)
        assert np.all(w[..., ~flat] < 1e-12)
        np.testing.assert_allclose(w.sum(-1), 1.0, rtol=0, atol=1e-9)


def test_selection_needs_a_real_token(params, rng):
    with pytest.raises(MaskAllFalse):
        select_knowledge(nm.Tensor(rng.normal(size=(1, 2 * CFG.d))), nm.Tensor(np.ones((1, 3, CFG.d))),
                         np.zeros((1, 3), bool), params, CFG)


def test_trace_file_round_trip(params, rng, tmp_path):
    states, mask = memory(rng)
    _, trace = select_knowledge(nm.Tensor(rng.normal(size=(2, 2 * CFG.d))), states, mask, params, CFG)
    assert write_traces(tmp_path / "t.jsonl", [("a", trace), ("b", trace)]) == 2 * CFG.s * CFG.heads
    back = read_traces(tmp_path / "t.jsonl")
    for did in ("a", "b"):
        for w0, w1 in zip(trace.layers, back[did].layers):
            assert w0.tobytes() == w1.tobytes()


# ---------------------------------------------------------------- [SOS]

def test_zero_map_gives_zero_sos(params, rng):
    params["gen.wk.w"].data[:] = 0
    out = make_sos(nm.Tensor(rng.normal(size=CFG.d)), nm.Tensor(rng.normal(size=2 * CFG.d)), params)
    np.testing.assert_array_equal(out.data, 0.0)


def test_sos_is_linear(params, rng):
    S, h = rng.normal(size=CFG.d), rng.normal(size=2 * CFG.d)
    once = make_sos(nm.Tensor(S), nm.Tensor(h), params).data
    twice = make_sos(nm.Tensor(2 * S), nm.Tensor(2 * h), params).data
    np.testing.assert_allclose(twice, 2 * once, rtol=1e-13, atol=1e-14)


def test_sos_knowledge_block(params, rng):
    S, h = rng.normal(size=CFG.d), rng.normal(size=2 * CFG.d)
    W = params["gen.wk.w"].data  # (3d, d): rows 0..d-1 read S
    delta = make_sos(nm.Tensor(2 * S), nm.Tensor(h), params).data - make_sos(nm.Tensor(S), nm.Tensor(h), params).data
    np.testing.assert_allclose(delta, S @ W[:CFG.d], rtol=0, atol=1e-13)


# ---------------------------------------------------------------- decoding

def test_uniform_output_gives_log_vocab_per_step(params, rng):
    params["out.w"].data[:] = 0
    params["out.b"].data[:] = 0
    states, mask = memory(rng)
    L, step, logits = decode_train(states, mask, nm.Tensor(rng.normal(size=CFG.d)), [7, 8, 9, EOS_ID], params, CFG)
    assert abs(L.item() - 4 * math.log(V)) < 1e-12
    assert logits.shape == (4, V)


def test_rigged_output_gives_tiny_nll(params, rng):
    params["out.w"].data[:] = 0
    params["out.b"].data[:] = 0
    params["out.b"].data[9] = 30.0
    states, mask = memory(rng)
    L, _, _ = decode_train(states, mask, nm.Tensor(rng.normal(size=CFG.d)), [9, 9, 9], params, CFG)
    assert L.item() < 1e-3 * 3


def test_decoder_is_causal(params, rng):
    states, mask = memory(rng)
    sos = nm.Tensor(rng.normal(size=CFG.d))
    target = np.array([5, 6, 7, 8, 9, EOS_ID])
    _, _, base = decode_train(states, mask, sos, target, params, CFG)
    for t in range(len(target) - 1):
        changed = target.copy()
        changed[t + 1] = 11 if changed[t + 1] != 11 else 12
        _, _, logits = decode_train(states, mask, sos, changed, params, CFG)
        # input position t+1 holds target[t]; steps up to t see only target[:t]
        np.testing.assert_allclose(logits.data[: t + 2], base.data[: t + 2], rtol=0, atol=1e-12)


def test_decoder_length_limit(params, rng):
    states, mask = memory(rng)
    with pytest.raises(LengthExceeded):
        decode_train(states, mask, nm.Tensor(np.zeros(CFG.d)), [5] * (CFG.n_positions + 1), params, CFG)


def _scripted(script):
    def fake(p, cfg, sos, prev_ids, memory, mem_mask):
        logits = np.zeros((len(prev_ids) + 1, V))
        logits[-1, script[min(len(prev_ids), len(script) - 1)]] = 5.0
        return nm.Tensor(logits)
    return fake


def test_greedy_stops_on_immediate_eos(params, rng, monkeypatch):
    params["out.w"].data[:] = 0
    params["out.b"].data[:] = 0
    params["out.b"].data[EOS_ID] = 10.0
    states, mask = memory(rng)
    mem, mmask = gen.flatten_memory(states, mask)
    out = greedy_decode(params, CFG, nm.Tensor(np.zeros(CFG.d)), mem, mmask)
    assert out.token_ids == [] and out.steps == 1


def test_greedy_emits_then_stops(params, rng, monkeypatch):
    monkeypatch.setattr(gen, "_decoder", _scripted([17, EOS_ID]))
    out = greedy_decode(params, CFG, nm.Tensor(np.zeros(CFG.d)), nm.Tensor(np.zeros((1, CFG.d))), [True])
    assert out.token_ids == [17] and out.steps == 2


def test_greedy_respects_max_steps(params, monkeypatch):
    monkeypatch.setattr(gen, "_decoder", _scripted([17]))
    out = greedy_decode(params, CFG, nm.Tensor(np.zeros(CFG.d)), nm.Tensor(np.zeros((1, CFG.d))), [True], 4)
    assert out.token_ids == [17] * 4


def test_greedy_is_deterministic(params, rng):
    states, mask = memory(rng)
    mem, mmask = gen.flatten_memory(states, mask)
    sos = nm.Tensor(rng.normal(size=CFG.d))
    a = greedy_decode(params, CFG, sos, mem, mmask)
    b = greedy_decode(params, CFG, sos, mem, mmask)
    assert a.token_ids == b.token_ids and a.nll == b.nll


# ---------------------------------------------------------------- FACE

@given(st.integers(0, 2**31), st.integers(1, 8))
def test_face_with_unit_weights_is_nll(seed, T):
    r = np.random.default_rng(seed)
    logits = nm.Tensor(r.normal(scale=3, size=(T, V)))
    target = r.integers(0, V, size=T)
    nll = nm.tsum(nm.cross_entropy(logits, target)).item()
    assert abs(face_loss_from_logits(logits, target, np.ones(V)).item() - nll) < 1e-12


def test_face_with_zero_gold_weights(rng):
    target = np.array([3, 7, 7])
    w = np.ones(V)
    w[target] = 0
    assert face_loss_from_logits(rng.normal(size=(3, V)), target, w).item() == 0.0


def vocab_with(freqs):
    toks = list(freqs)
    return Vocabulary(list(SPECIALS) + toks, dict(freqs))


def test_equal_frequencies_give_unit_weights():
    np.testing.assert_array_equal(face_weights(vocab_with({"a": 4, "b": 4, "c": 4})), 1.0)


def test_two_token_weights():
    w = face_weights(vocab_with({"frequent": 3, "rare": 1}))[len(SPECIALS):]
    # RF = (3/4, 1/4); raw = 1 - RF/max = (0, 2/3); mean-1 shift adds 2/3
    np.testing.assert_allclose(w, [2 / 3, 4 / 3], rtol=0, atol=1e-15)
    assert w[1] > 1 > w[0]
    assert abs(w.mean() - 1) < 1e-15


def test_single_token_weight():
    np.testing.assert_array_equal(face_weights(vocab_with({"only": 9})), 1.0)


def test_most_frequent_token_has_minimum_weight():
    w = face_weights(vocab_with({"the": 50, "cat": 3, "sat": 7, "mat": 1}))
    body = w[len(SPECIALS):]
    assert body[0] == body.min()
    np.testing.assert_array_equal(w[: len(SPECIALS)], 1.0)


@given(st.lists(st.integers(1, 100), min_size=1, max_size=12))
def test_face_weight_bounds(freqs):
    w = face_weights(vocab_with({f"t{i}": f for i, f in enumerate(freqs)}))[len(SPECIALS):]
    assert np.all((0 <= w) & (w <= 2))
    order = np.argsort(freqs, kind="stable")
    assert np.all(np.diff(w[order]) <= 1e-15)


def test_empty_frequency_table():
    with pytest.raises(EmptyFrequencyTable):
        face_weights(Vocabulary(list(SPECIALS)))


# ---------------------------------------------------------------- total loss

def test_total_loss_composition():
    assert total_loss(2.0, 3.0, 0.0, 0.0, 1.0) == 6.5
    assert total_loss(2.0, 1.0, 1.0, 1.0, 1.0) == 6.5


def test_total_loss_without_diversity():
    assert total_loss(2.0, 1.0, 1.0, 1.0, 1.0, gamma=0.0) == 5.0


def test_total_loss_zero():
    assert total_loss(0.0, 0.0, 0.0, 0.0, 0.0) == 0.0


def test_total_loss_non_finite():
    with pytest.raises(NonFinite):
        total_loss(float("nan"), 0.0, 0.0, 0.0, 0.0)


@given(*[st.floats(0, 100) for _ in range(5)], st.floats(0, 3), st.floats(0, 3), st.floats(0, 3),
       st.integers(0, 4), st.floats(0, 10))
def test_total_loss_is_linear_per_term(a, b, c, d, e, alpha, beta, gamma, which, bump):
    terms = [a, b, c, d, e]
    coef = [alpha, beta, beta, beta, gamma][which]
    bumped = list(terms)
    bumped[which] += bump
    diff = total_loss(*bumped, alpha, beta, gamma) - total_loss(*terms, alpha, beta, gamma)
    assert abs(diff - coef * bump) < 1e-9


def test_total_loss_tensor_mode_backprops():
    x = nm.Parameter(np.array(2.0), "x")
    out = total_loss(x, None, None, None, x)
    nm.backward(out, [x])
    assert out.item() == 5.0 and x.grad == 2.5


def test_decode_output_steps():
    assert DecodeOutput([1], [np.zeros(3), np.zeros(3)], [0.1, 0.2]).steps == 2
    assert SelectionTrace().layers == []
