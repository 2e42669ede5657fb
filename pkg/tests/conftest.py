import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from seek.config import ModelConfig
from seek.generator import face_weights
from seek.model import SeekModel, prepare_all
from seek.synthetic import desk_setup

settings.register_profile("ci", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_cfg():
    return ModelConfig(d=8, layers=1, heads=2, L_n=12, L_s=40, max_decode=8)


@pytest.fixture(scope="session")
def toy(tiny_cfg):
    """Four synthetic dialogues, their vocabulary, provider and prepared examples."""
    dialogues, vocab, provider = desk_setup(30, 4, seed=3, n_utterances=(2, 5))
    return dialogues, vocab, provider, prepare_all(dialogues, vocab, provider, tiny_cfg)


@pytest.fixture
def toy_model(tiny_cfg, toy):
    _, vocab, _, _ = toy
    return SeekModel(tiny_cfg, vocab, seed=5, face_w=face_weights(vocab))
