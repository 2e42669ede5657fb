import numpy as np
import pytest

from seek.config import Ablation, ModelConfig, TrainConfig, load_config, to_dict, train_config_from_dict
from seek.corpus import CLS_ID, EOS_ID, Role, Utterance
from seek.errors import BadFlag, MissingFile
from seek.model import SeekModel, prepare, prepare_context


def test_prepare_shapes(toy, tiny_cfg):
    dialogues, _, _, exs = toy
    for d, ex in zip(dialogues, exs):
        n = len(d.utterances) - 1
        assert ex.ctx_ids.shape[0] == n and np.all(ex.ctx_ids[:, 0] == CLS_ID)
        assert ex.know_ids.shape == (n, tiny_cfg.L_s)
        assert ex.states.tolist() == [i % 2 for i in range(n)]
        assert ex.target_ids[-1] == EOS_ID
        assert ex.ei_target == d.target.ei_label and ex.emotion == d.dialogue_emotion


def test_with_padding_only_appends_masked_columns(toy):
    ex = toy[3][0]
    padded = ex.with_padding(3, 2)
    assert padded.ctx_ids.shape[1] == ex.ctx_ids.shape[1] + 3
    assert not padded.ctx_mask[:, -3:].any() and not padded.know_mask[:, -2:].any()
    np.testing.assert_array_equal(padded.ctx_ids[:, : ex.ctx_ids.shape[1]], ex.ctx_ids)


def test_generate_is_repeatable(toy_model, toy):
    ex = toy[3][1]
    a, pa, ta = toy_model.generate(ex)
    b, pb, tb = toy_model.generate(ex)
    assert a.token_ids == b.token_ids and pa == pb
    assert all(np.array_equal(x, y) for x, y in zip(ta.layers, tb.layers))
    assert len(a.token_ids) <= toy_model.cfg.max_decode


def test_context_only_example(toy_model, toy):
    _, vocab, provider, _ = toy
    ex = prepare_context("q", (Utterance("w1 w2", Role.SPEAKER, 0),), vocab, provider, toy_model.cfg)
    out, pred, _ = toy_model.generate(ex)
    assert ex.n_context == 1 and 0 <= pred < 41


def test_save_load_preserves_everything(toy_model, toy, tmp_path):
    path = str(tmp_path / "m.ckpt")
    toy_model.save(path, {"step": 7})
    back = SeekModel.load(path)
    assert back.vocab.itos == toy_model.vocab.itos
    assert back.cfg == toy_model.cfg and back.meta["step"] == 7
    np.testing.assert_array_equal(back.face_w, toy_model.face_w)
    for name, p in toy_model.params.items():
        assert back.params[name].data.tobytes() == p.data.tobytes()


def test_config_file_and_overrides(tmp_path):
    (tmp_path / "c.cfg").write_text("# desk run\nd = 16\nheads=4\ngamma=0.5\nnoam=false\nablate=no_knowledge\n")
    m, t = load_config(tmp_path / "c.cfg", {"d": "8"})
    assert (m.d, m.heads, m.ff) == (8, 4, 16)
    assert t.gamma == 0.5 and t.noam is False and t.ablation.no_knowledge


@pytest.mark.parametrize("bad", [{"nonsense": "1"}, {"d": "seven"}, {"noam": "maybe"}, {"d": "9", "heads": "2"},
                                 {"ablate": "no_everything"}])
def test_bad_config_values(bad):
    with pytest.raises(BadFlag):
        load_config(None, bad)


def test_missing_config_file(tmp_path):
    with pytest.raises(MissingFile):
        load_config(tmp_path / "none.cfg")


def test_train_config_dict_round_trip():
    t = TrainConfig(gamma=0.0, ablation=Ablation(no_utter_tagging=True))
    assert train_config_from_dict(to_dict(t)) == t


def test_ablation_parse():
    ab = Ablation.parse("no_knowledge, no_utter_tagging")
    assert ab.active() == ["no_utter_tagging", "no_knowledge"]
    assert Ablation.parse("").active() == []


def test_default_dimensions():
    cfg = ModelConfig()
    assert (cfg.t, cfg.q, cfg.s, cfg.ff) == (41, 32, 2, 64)
    with pytest.raises(ValueError):
        ModelConfig(t=40)
