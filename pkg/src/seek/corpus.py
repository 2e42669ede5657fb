"""Annotated empathetic dialogues: records, label tables, tokenization, vocabulary."""

from __future__ import annotations

import json
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .errors import EmptyDialogue, EmptyText, LabelOutOfRange, MissingFile, ParseError

EMOTIONS = tuple(sorted([
    "afraid", "angry", "annoyed", "anticipating", "anxious", "apprehensive",
    "ashamed", "caring", "confident", "content", "devastated", "disappointed",
    "disgusted", "embarrassed", "excited", "faithful", "furious", "grateful",
    "guilty", "hopeful", "impressed", "jealous", "joyful", "lonely",
    "nostalgic", "prepared", "proud", "sad", "sentimental", "surprised",
    "terrified", "trusting",
]))
INTENTS = (
    "acknowledging", "agreeing", "consoling", "encouraging", "neutral",
    "questioning", "suggesting", "sympathizing", "wishing",
)
# one tagging space for utterances: 32 emotions + 9 listener intents
EMOTION_INTENTS = tuple(sorted(EMOTIONS + INTENTS))
NUM_EMOTIONS = len(EMOTIONS)
NUM_EI = len(EMOTION_INTENTS)
assert NUM_EMOTIONS == 32 and NUM_EI == 41

PAD, UNK, CLS, SOS, EOS = "<pad>", "<unk>", "<cls>", "<sos>", "<eos>"
SPECIALS = (PAD, UNK, CLS, SOS, EOS)
PAD_ID, UNK_ID, CLS_ID, SOS_ID, EOS_ID = range(5)
SEP = "<sep>"

_TOKEN_RE = re.compile(r"<sep>|\w+|[^\w\s]")


class Role(str, Enum):
    SPEAKER = "speaker"
    LISTENER = "listener"


@dataclass(frozen=True)
class Utterance:
    text: str
    role: Role
    ei_label: int

    def __post_init__(self):
        if not self.text.strip():
            raise EmptyText("utterance text is empty")
        if not 0 <= self.ei_label < NUM_EI:
            raise LabelOutOfRange(f"ei label {self.ei_label} outside [0, {NUM_EI})", field="ei")


@dataclass(frozen=True)
class Dialogue:
    id: str
    utterances: tuple[Utterance, ...]
    dialogue_emotion: int

    def __post_init__(self):
        if len(self.utterances) < 2:
            raise EmptyDialogue(f"dialogue {self.id!r} needs a context and a target")
        if not 0 <= self.dialogue_emotion < NUM_EMOTIONS:
            raise LabelOutOfRange(
                f"emotion {self.dialogue_emotion} outside [0, {NUM_EMOTIONS})", field="emotion"
            )
        for i, u in enumerate(self.utterances):
            want = Role.SPEAKER if i % 2 == 0 else Role.LISTENER
            if u.role != want:
                raise ParseError(f"dialogue {self.id!r}: utterance {i} should be {want.value}")

    @property
    def context(self) -> tuple[Utterance, ...]:
        return self.utterances[:-1]

    @property
    def target(self) -> Utterance:
        return self.utterances[-1]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, detach punctuation."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


def dialogue_from_record(rec: dict, line: int | None = None, require_labels=True) -> Dialogue:
    try:
        utts = rec["utterances"]
        if not isinstance(utts, list):
            raise ParseError("'utterances' must be a list", line)
        if not utts:
            raise EmptyDialogue("no utterances", line)
        built = []
        for u in utts:
            role = Role(u["role"])
            ei = u["ei"] if require_labels else u.get("ei", 0)
            if not isinstance(ei, int) or isinstance(ei, bool):
                raise ParseError(f"ei must be an integer, got {ei!r}", line)
            if not 0 <= ei < NUM_EI:
                raise LabelOutOfRange(f"ei label {ei} outside [0, {NUM_EI})", line, "ei")
            built.append(Utterance(str(u["text"]), role, ei))
        emotion = rec["emotion"] if require_labels else rec.get("emotion", 0)
        if not isinstance(emotion, int) or isinstance(emotion, bool):
            raise ParseError(f"emotion must be an integer, got {emotion!r}", line)
        if not 0 <= emotion < NUM_EMOTIONS:
            raise LabelOutOfRange(f"emotion {emotion} outside [0, {NUM_EMOTIONS})", line, "emotion")
        if len(built) < 2:
            raise EmptyDialogue("a dialogue needs at least two utterances", line)
        return Dialogue(str(rec["id"]), tuple(built), emotion)
    except ParseError as exc:
        if exc.line is None and line is not None:
            if isinstance(exc, LabelOutOfRange):
                raise LabelOutOfRange(str(exc), line, exc.field) from exc
            raise type(exc)(str(exc), line) from exc
        raise
    except (KeyError, TypeError, ValueError, EmptyText) as exc:
        raise ParseError(f"malformed record: {exc}", line) from exc


def dialogue_to_record(d: Dialogue) -> dict:
    return {
        "id": d.id,
        "emotion": d.dialogue_emotion,
        "utterances": [{"text": u.text, "role": u.role.value, "ei": u.ei_label} for u in d.utterances],
    }


def load_corpus(path) -> list[Dialogue]:
    if not os.path.isfile(path):
        raise MissingFile(f"no corpus file at {path}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(rec, dict):
                raise ParseError("record must be a JSON object", lineno)
            out.append(dialogue_from_record(rec, lineno))
    return out


def load_contexts(path) -> list[tuple[str, tuple[Utterance, ...]]]:
    """Context-only records for generation: corpus format, labels optional, one turn allowed."""
    if not os.path.isfile(path):
        raise MissingFile(f"no context file at {path}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
                utts = tuple(Utterance(str(u["text"]), Role(u["role"]), int(u.get("ei", 0)))
                             for u in rec["utterances"])
                did = str(rec["id"])
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            except LabelOutOfRange as exc:
                raise LabelOutOfRange(str(exc), lineno, exc.field) from exc
            except (KeyError, TypeError, ValueError, EmptyText) as exc:
                raise ParseError(f"malformed record: {exc}", lineno) from exc
            if not utts:
                raise EmptyDialogue("no utterances", lineno)
            for i, u in enumerate(utts):
                if u.role != (Role.SPEAKER if i % 2 == 0 else Role.LISTENER):
                    raise ParseError(f"utterance {i} breaks speaker/listener alternation", lineno)
            out.append((did, utts))
    return out


def save_corpus(path, dialogues: Iterable[Dialogue]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(dialogue_to_record(d)) + "\n")


@dataclass
class Vocabulary:
    """Token ids with the five specials in slots 0-4.

    ``freq`` counts occurrences in target responses; indexed tokens that never
    appear in a response are floored at 1 so every in-vocab count is positive.
    """

    itos: list[str]
    freq: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if tuple(self.itos[:5]) != SPECIALS:
            raise ValueError("vocabulary must start with the five special tokens")
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def frequency(self, token: str) -> int:
        return self.freq.get(token, 0)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.itos[5:]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path, freq=None) -> "Vocabulary":
        if not os.path.isfile(path):
            raise MissingFile(f"no vocabulary file at {path}")
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(list(SPECIALS) + tokens, dict(freq or {}))


def build_vocab(dialogues: Sequence[Dialogue], min_freq: int = 1, extra_tokens: Iterable[str] = ()) -> Vocabulary:
    """Index tokens seen at least ``min_freq`` times in any utterance.

    Ids follow first-appearance order, so identical input gives identical ids.
    ``extra_tokens`` (e.g. the knowledge separator) are always indexed.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter[str] = Counter()
    order: dict[str, None] = {}
    response_counts: Counter[str] = Counter()
    for d in dialogues:
        for u in d.utterances:
            toks = tokenize(u.text)
            counts.update(toks)
            order.update(dict.fromkeys(toks))
        response_counts.update(tokenize(d.target.text))
    itos = list(SPECIALS)
    seen = set(itos)
    for tok in list(extra_tokens) + [t for t in order if counts[t] >= min_freq]:
        if tok not in seen:
            seen.add(tok)
            itos.append(tok)
    freq = {t: max(1, response_counts[t]) for t in itos[5:]}
    return Vocabulary(itos, freq)


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]
    mask: tuple[bool, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.mask):
            raise ValueError("ids and mask lengths differ")

    def __len__(self):
        return len(self.ids)

    def padded(self, length: int) -> "TokenSeq":
        if length < len(self.ids):
            raise ValueError("cannot pad to a shorter length")
        extra = length - len(self.ids)
        return TokenSeq(self.ids + (PAD_ID,) * extra, self.mask + (False,) * extra)


def tokenize_utterance(text: str, vocab: Vocabulary, max_len: int) -> TokenSeq:
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    toks = tokenize(text)
    if not toks:
        raise EmptyText("utterance has no tokens")
    ids = (CLS_ID,) + tuple(vocab.encode(toks[: max_len - 1]))
    return TokenSeq(ids, (True,) * len(ids))


def tokenize_target(text: str, vocab: Vocabulary, max_len: int) -> TokenSeq:
    """Gold response tokens followed by EOS, at most ``max_len`` ids in total."""
    toks = tokenize(text)
    ids = tuple(vocab.encode(toks[: max_len - 1])) + (EOS_ID,)
    return TokenSeq(ids, (True,) * len(ids))


def dialogue_state_ids(dialogue: Dialogue) -> list[int]:
    """Speaker -> 0, Listener -> 1, one id per context utterance."""
    return [0 if u.role == Role.SPEAKER else 1 for u in dialogue.context]


def broadcast_state(state: int, n_tokens: int) -> list[int]:
    return [state] * n_tokens
