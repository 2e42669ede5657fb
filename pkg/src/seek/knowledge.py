"""Commonsense inferences per context utterance.

Two interchangeable backends stand in for a generative commonsense model: a
keyword template table and a precomputed JSON-lines file.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Protocol

from .corpus import PAD_ID, SEP, TokenSeq, Vocabulary, tokenize
from .errors import MissingFile, ParseError, ProviderMiss

PER_RELATION = 5


class Relation(str, Enum):
    X_INTENT = "xIntent"
    X_NEED = "xNeed"
    X_WANT = "xWant"
    X_EFFECT = "xEffect"
    X_REACT = "xReact"


RELATIONS = tuple(Relation)


class KnowledgeProvider(Protocol):
    def generate(self, utterance_text: str, relation: Relation) -> list[str]: ...


# keyword -> relation -> inferences
TEMPLATES: dict[str, dict[Relation, tuple[str, ...]]] = {
    "baby": {
        Relation.X_INTENT: ("to see the baby", "to know the gender"),
        Relation.X_NEED: ("to have an ultrasound", "to go to the doctor"),
        Relation.X_WANT: ("to show it to their friends",),
        Relation.X_EFFECT: ("to see the baby",),
        Relation.X_REACT: ("happy", "excited"),
    },
    "dog": {
        Relation.X_INTENT: ("to have a pet",),
        Relation.X_NEED: ("to buy food", "to walk the dog"),
        Relation.X_WANT: ("to play with the dog",),
        Relation.X_EFFECT: ("gets a companion",),
        Relation.X_REACT: ("happy", "loved"),
    },
    "job": {
        Relation.X_INTENT: ("to earn money", "to have a career"),
        Relation.X_NEED: ("to apply", "to interview"),
        Relation.X_WANT: ("to get promoted",),
        Relation.X_EFFECT: ("gets paid",),
        Relation.X_REACT: ("proud", "nervous"),
    },
    "exam": {
        Relation.X_INTENT: ("to pass the class",),
        Relation.X_NEED: ("to study",),
        Relation.X_WANT: ("to get a good grade",),
        Relation.X_EFFECT: ("gets tired",),
        Relation.X_REACT: ("anxious", "relieved"),
    },
    "lost": {
        Relation.X_INTENT: ("none",),
        Relation.X_NEED: ("to look for it",),
        Relation.X_WANT: ("to find it",),
        Relation.X_EFFECT: ("cries",),
        Relation.X_REACT: ("sad", "upset"),
    },
    "scared": {
        Relation.X_INTENT: ("to be safe",),
        Relation.X_NEED: ("to hide",),
        Relation.X_WANT: ("to run away",),
        Relation.X_EFFECT: ("shakes",),
        Relation.X_REACT: ("afraid", "terrified"),
    },
    "friend": {
        Relation.X_INTENT: ("to be social",),
        Relation.X_NEED: ("to call them",),
        Relation.X_WANT: ("to hang out",),
        Relation.X_EFFECT: ("smiles",),
        Relation.X_REACT: ("happy",),
    },
    "angry": {
        Relation.X_INTENT: ("to vent",),
        Relation.X_NEED: ("to calm down",),
        Relation.X_WANT: ("to yell",),
        Relation.X_EFFECT: ("gets mad",),
        Relation.X_REACT: ("angry", "annoyed"),
    },
}

FILLERS: dict[Relation, tuple[str, ...]] = {
    Relation.X_INTENT: ("none", "to be understood", "to share", "to talk", "to be heard"),
    Relation.X_NEED: ("none", "to think", "to talk to someone", "to be there", "to remember"),
    Relation.X_WANT: ("none", "to feel better", "to tell someone", "to relax", "to move on"),
    Relation.X_EFFECT: ("none", "thinks about it", "talks", "feels something", "remembers"),
    Relation.X_REACT: ("none", "emotional", "thoughtful", "ok", "content"),
}


class TemplateProvider:
    """Keyword lookup with a rotating filler so every relation yields five strings.

    Output depends only on the keywords present in the utterance: the filler
    rotation offset is a stable digest of the sorted keyword set.
    """

    def __init__(self, templates: Mapping[str, Mapping[Relation, Iterable[str]]] | None = None,
                 fillers: Mapping[Relation, Iterable[str]] | None = None):
        src = TEMPLATES if templates is None else templates
        self.templates = {k: {Relation(r): tuple(v) for r, v in rel.items()} for k, rel in src.items()}
        self.fillers = {Relation(r): tuple(v) for r, v in (fillers or FILLERS).items()}

    def keywords(self, text: str) -> list[str]:
        toks = tokenize(text)
        return [k for k in dict.fromkeys(toks) if k in self.templates]

    def generate(self, utterance_text: str, relation: Relation) -> list[str]:
        relation = Relation(relation)
        keys = self.keywords(utterance_text)
        out: list[str] = []
        for k in keys:
            for inf in self.templates[k].get(relation, ()):
                if inf not in out and len(out) < PER_RELATION:
                    out.append(inf)
        fill = self.fillers[relation]
        offset = int(hashlib.sha1(" ".join(sorted(keys)).encode()).hexdigest(), 16) % len(fill)
        i = 0
        while len(out) < PER_RELATION:
            out.append(fill[(offset + i) % len(fill)])
            i += 1
        return out


class FileProvider:
    """Answers by exact utterance-text key from a precomputed table."""

    def __init__(self, table: Mapping[str, Mapping[Relation, list[str]]], fallback: bool = False):
        self.table = dict(table)
        self.fallback = fallback

    def __len__(self):
        return len(self.table)

    def __contains__(self, key):
        return key in self.table

    def generate(self, utterance_text: str, relation: Relation) -> list[str]:
        entry = self.table.get(utterance_text)
        if entry is None:
            if self.fallback:
                return ["none"] * PER_RELATION
            raise ProviderMiss(utterance_text)
        return list(entry[Relation(relation)])


def load_precomputed(path, fallback: bool = False) -> FileProvider:
    if not os.path.isfile(path):
        raise MissingFile(f"no knowledge file at {path}")
    table: dict[str, dict[Relation, list[str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(rec, dict) or not isinstance(rec.get("key"), str):
                raise ParseError("record needs a string 'key'", lineno)
            key = rec["key"]
            if key in table:
                raise ParseError(f"duplicate key {key!r}", lineno)
            entry = {}
            for rel in RELATIONS:
                vals = rec.get(rel.value)
                if not isinstance(vals, list) or len(vals) != PER_RELATION or not all(isinstance(v, str) for v in vals):
                    raise ParseError(f"{rel.value} must be a list of {PER_RELATION} strings", lineno)
                entry[rel] = vals
            table[key] = entry
    return FileProvider(table, fallback)


def write_precomputed(path, texts: Iterable[str], provider: KnowledgeProvider) -> int:
    """Write one record per distinct text; returns the number of records."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for text in dict.fromkeys(texts):
            rec = {"key": text}
            rec.update({rel.value: list(provider.generate(text, rel)) for rel in RELATIONS})
            fh.write(json.dumps(rec) + "\n")
            n += 1
    return n


@dataclass(frozen=True)
class KnowledgeBundle:
    inferences: dict  # Relation -> tuple of 5 strings
    assembled_text: str
    tokens: TokenSeq

    @property
    def n_inferences(self) -> int:
        return sum(len(v) for v in self.inferences.values())


def assemble(utterance_text: str, provider: KnowledgeProvider, vocab: Vocabulary, L_s: int) -> KnowledgeBundle:
    """Concatenate the 25 inferences in relation order, joined by the separator."""
    if L_s < len(RELATIONS) * PER_RELATION:
        raise ValueError(f"L_s must be >= {len(RELATIONS) * PER_RELATION}")
    inferences = {}
    flat = []
    for rel in RELATIONS:
        vals = tuple(provider.generate(utterance_text, rel))
        if len(vals) != PER_RELATION:
            raise ValueError(f"provider returned {len(vals)} inferences for {rel.value}")
        inferences[rel] = vals
        flat.extend(vals)
    text = f" {SEP} ".join(flat)
    ids = vocab.encode(tokenize(text))[:L_s]
    n = len(ids)
    tokens = TokenSeq(tuple(ids) + (PAD_ID,) * (L_s - n), (True,) * n + (False,) * (L_s - n))
    return KnowledgeBundle(inferences, text, tokens)
