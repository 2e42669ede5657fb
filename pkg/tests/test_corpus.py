import json
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from seek.corpus import (CLS_ID, EMOTION_INTENTS, EMOTIONS, INTENTS, NUM_EI, NUM_EMOTIONS, SPECIALS, UNK_ID,
                         Dialogue, Role, Utterance, Vocabulary, broadcast_state, build_vocab, detokenize,
                         dialogue_state_ids, load_contexts, load_corpus, save_corpus, tokenize, tokenize_target,
                         tokenize_utterance)
from seek.errors import EmptyDialogue, EmptyText, LabelOutOfRange, MissingFile, ParseError, SeekError


def dlg(*texts, id="d", emotion=0, ei=0):
    utts = tuple(Utterance(t, Role.SPEAKER if i % 2 == 0 else Role.LISTENER, ei) for i, t in enumerate(texts))
    return Dialogue(id, utts, emotion)


def record(n=2, ei=0, emotion=3, id="x"):
    roles = ["speaker", "listener"]
    return {"id": id, "emotion": emotion,
            "utterances": [{"text": f"hello {i}", "role": roles[i % 2], "ei": ei} for i in range(n)]}


def write_lines(path, recs):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in recs))
    return path


def test_label_tables():
    assert len(EMOTIONS) == NUM_EMOTIONS == 32
    assert len(INTENTS) == 9
    assert len(EMOTION_INTENTS) == NUM_EI == 41
    assert list(EMOTIONS) == sorted(EMOTIONS)
    assert set(EMOTIONS) <= set(EMOTION_INTENTS)


def test_load_two_dialogues(tmp_path):
    path = write_lines(tmp_path / "c.jsonl", [record(2, id="a"), record(4, id="b")])
    ds = load_corpus(path)
    assert [d.id for d in ds] == ["a", "b"]
    assert [len(d.utterances) for d in ds] == [2, 4]


def test_ei_label_41_is_out_of_range(tmp_path):
    path = write_lines(tmp_path / "c.jsonl", [record(), record(ei=41)])
    with pytest.raises(LabelOutOfRange) as err:
        load_corpus(path)
    assert err.value.line == 2 and err.value.field == "ei"


def test_emotion_out_of_range(tmp_path):
    with pytest.raises(LabelOutOfRange) as err:
        load_corpus(write_lines(tmp_path / "c.jsonl", [record(emotion=32)]))
    assert err.value.field == "emotion"


def test_empty_file(tmp_path):
    assert load_corpus(write_lines(tmp_path / "c.jsonl", [])) == []


def test_missing_file(tmp_path):
    with pytest.raises(MissingFile):
        load_corpus(tmp_path / "nope.jsonl")


def test_bad_json_reports_line(tmp_path):
    with pytest.raises(ParseError) as err:
        load_corpus(write_lines(tmp_path / "c.jsonl", [record(), "{not json"]))
    assert err.value.line == 2
    assert str(err.value).startswith("line 2")


@pytest.mark.parametrize("n", [0, 1])
def test_too_few_utterances(tmp_path, n):
    with pytest.raises(EmptyDialogue):
        load_corpus(write_lines(tmp_path / "c.jsonl", [record(n)]))


def test_non_alternating_roles_rejected(tmp_path):
    rec = record(2)
    rec["utterances"][1]["role"] = "speaker"
    with pytest.raises(ParseError):
        load_corpus(write_lines(tmp_path / "c.jsonl", [rec]))


def test_save_load_round_trip(tmp_path):
    ds = [dlg("i am sad .", "why ?", id="a", emotion=5, ei=7), dlg("hi", "hey", "bye", id="b")]
    save_corpus(tmp_path / "c.jsonl", ds)
    assert load_corpus(tmp_path / "c.jsonl") == ds


record_strategy = st.fixed_dictionaries({
    "id": st.one_of(st.text(max_size=4), st.integers()),
    "emotion": st.one_of(st.integers(-2, 34), st.just("x")),
    "utterances": st.lists(st.fixed_dictionaries({
        "text": st.sampled_from(["hi", "", "  ", "a b .", "ok!"]),
        "role": st.sampled_from(["speaker", "listener", "bot"]),
        "ei": st.one_of(st.integers(-1, 42), st.booleans()),
    }), max_size=4),
})


@given(st.lists(record_strategy, max_size=3))
def test_loaded_dialogues_satisfy_invariants(tmp_path_factory, recs):
    path = write_lines(tmp_path_factory.mktemp("c") / "c.jsonl", recs)
    try:
        ds = load_corpus(path)
    except SeekError:
        return
    for d in ds:
        assert len(d.utterances) >= 2
        assert 0 <= d.dialogue_emotion < 32
        for i, u in enumerate(d.utterances):
            assert 0 <= u.ei_label < 41
            assert u.text.strip()
            assert u.role == (Role.SPEAKER if i % 2 == 0 else Role.LISTENER)


def test_tokenize_detaches_punctuation():
    assert tokenize("I'm SAD, really!") == ["i", "'", "m", "sad", ",", "really", "!"]


def test_vocab_counts():
    d = dlg("i i am", "i")
    assert len(build_vocab([d], 1)) == 7
    v2 = build_vocab([d], 2)
    assert "i" in v2 and "am" not in v2
    assert v2.id("am") == UNK_ID


def test_response_frequency():
    v = build_vocab([dlg("i am", "i i")])
    assert v.frequency("i") == 2
    assert v.frequency("am") == 1  # floor for indexed tokens absent from responses


@given(st.lists(st.lists(st.sampled_from("abcde"), min_size=1, max_size=5), min_size=2, max_size=8))
def test_frequency_matches_brute_force_count(turns):
    texts = [" ".join(t) for t in turns]
    d = dlg(*texts)
    v = build_vocab([d])
    target = texts[-1].split()
    for tok in v.itos[len(SPECIALS):]:
        assert v.frequency(tok) == max(1, sum(1 for t in target if t == tok))


@given(st.lists(st.text(alphabet="abc .", min_size=1, max_size=12).filter(str.strip), min_size=2, max_size=5),
       st.integers(1, 3))
def test_vocab_is_deterministic(texts, min_freq):
    texts = [t for t in texts if tokenize(t)]
    if len(texts) < 2:
        return
    d = dlg(*texts)
    assert build_vocab([d], min_freq).itos == build_vocab([d], min_freq).itos


def test_tokenize_utterance():
    v = build_vocab([dlg("i am", "ok")])
    assert tokenize_utterance("i am", v, 10).ids == (CLS_ID, v.id("i"), v.id("am"))
    assert tokenize_utterance("zzz", v, 10).ids == (CLS_ID, UNK_ID)
    assert tokenize_utterance("i am i am", v, 3).ids == (CLS_ID, v.id("i"), v.id("am"))
    assert all(tokenize_utterance("i am", v, 10).mask)
    with pytest.raises(EmptyText):
        tokenize_utterance(" ... ".replace(".", " "), v, 10)


def test_tokenize_target_ends_with_eos():
    v = build_vocab([dlg("i am", "ok")])
    ids = tokenize_target("ok ok ok", v, 3).ids
    assert ids == (v.id("ok"), v.id("ok"), SPECIALS.index("<eos>"))


@given(st.lists(st.sampled_from(["w0", "w1", "w2", ",", "?"]), min_size=1, max_size=10))
def test_detokenize_round_trip(tokens):
    v = Vocabulary(list(SPECIALS) + ["w0", "w1", "w2", ",", "?"])
    seq = tokenize_utterance(detokenize(tokens), v, 32)
    again = tokenize_utterance(detokenize(v.decode(seq.ids[1:])), v, 32)
    assert seq.ids == again.ids


def test_dialogue_states():
    assert dialogue_state_ids(dlg("a", "b", "c", "d")) == [0, 1, 0]
    assert dialogue_state_ids(dlg("a", "b")) == [0]
    assert broadcast_state(1, 4) == [1, 1, 1, 1]


def test_vocabulary_file_round_trip(tmp_path):
    v = build_vocab([dlg("i am here", "ok .")])
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt").itos == v.itos


def test_load_contexts_allows_single_turn_without_labels(tmp_path):
    path = write_lines(tmp_path / "ctx.jsonl", [{"id": "q", "utterances": [{"text": "my dog died", "role": "speaker"}]}])
    [(did, utts)] = load_contexts(path)
    assert did == "q" and len(utts) == 1 and utts[0].ei_label == 0
