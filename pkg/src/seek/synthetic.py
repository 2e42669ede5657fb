"""Seeded toy corpora and a word-level knowledge provider for desk-scale runs."""

from __future__ import annotations

import hashlib
from collections import Counter

import numpy as np

from .corpus import NUM_EI, NUM_EMOTIONS, SEP, SPECIALS, Dialogue, Role, Utterance, Vocabulary, tokenize
from .knowledge import PER_RELATION, Relation


def words_for(vocab_size: int) -> list[str]:
    """Plain word tokens so that specials + <sep> + words has ``vocab_size`` entries."""
    n = vocab_size - len(SPECIALS) - 1
    if n < 2:
        raise ValueError("vocab_size too small for a synthetic corpus")
    return [f"w{i}" for i in range(n)]


def make_vocab(words, dialogues) -> Vocabulary:
    response = Counter()
    for d in dialogues:
        response.update(tokenize(d.target.text))
    itos = list(SPECIALS) + [SEP] + list(words)
    return Vocabulary(itos, {t: max(1, response[t]) for t in itos[len(SPECIALS):]})


def random_dialogues(n: int, words, seed: int = 0, n_utterances=(3, 3), length=(2, 6)) -> list[Dialogue]:
    """Dialogues with uniformly drawn labels and word sequences."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        m = int(rng.integers(n_utterances[0], n_utterances[1] + 1))
        utts = []
        for i in range(m):
            L = int(rng.integers(length[0], length[1] + 1))
            text = " ".join(words[j] for j in rng.integers(0, len(words), size=L))
            role = Role.SPEAKER if i % 2 == 0 else Role.LISTENER
            utts.append(Utterance(text, role, int(rng.integers(0, NUM_EI))))
        out.append(Dialogue(f"syn{seed}-{k}", tuple(utts), int(rng.integers(0, NUM_EMOTIONS))))
    return out


class HashProvider:
    """Inferences drawn from a fixed word list by hashing (text, relation)."""

    def __init__(self, words, words_per_inference: int = 1):
        self.words = list(words)
        self.k = words_per_inference

    def generate(self, utterance_text: str, relation: Relation) -> list[str]:
        seed = int(hashlib.sha1(f"{Relation(relation).value}|{utterance_text}".encode()).hexdigest()[:12], 16)
        rng = np.random.default_rng(seed)
        return [" ".join(self.words[j] for j in rng.integers(0, len(self.words), size=self.k))
                for _ in range(PER_RELATION)]


def desk_setup(vocab_size: int = 30, n_dialogues: int = 1, seed: int = 0, n_utterances=(3, 3), length=(2, 6)):
    """(dialogues, vocab, provider) for a fully synthetic run."""
    words = words_for(vocab_size)
    dialogues = random_dialogues(n_dialogues, words, seed, n_utterances, length)
    return dialogues, make_vocab(words, dialogues), HashProvider(words)
