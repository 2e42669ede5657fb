"""Model and training configuration, plus the flat key=value config file."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from typing import Mapping

from .corpus import NUM_EI, NUM_EMOTIONS
from .errors import BadFlag, MissingFile

ABLATIONS = ("no_utter_tagging", "no_response_prediction", "no_emotion_harmonization", "no_knowledge")

# row labels used when reporting each variant
ABLATION_LABELS = {
    "no_utter_tagging": "w/o Utter",
    "no_response_prediction": "w/o Res",
    "no_emotion_harmonization": "w/o Emo",
    "no_knowledge": "w/o Know",
}


@dataclass
class ModelConfig:
    d: int = 32
    layers: int = 1
    heads: int = 2
    ff: int = 0  # 0 -> 2 * d
    L_n: int = 16
    L_s: int = 64
    s: int = 2
    t: int = NUM_EI
    q: int = NUM_EMOTIONS
    max_decode: int = 30

    def __post_init__(self):
        if self.ff == 0:
            self.ff = 2 * self.d
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ValueError(f"d={self.d} must be a positive multiple of heads={self.heads}")
        if self.t != NUM_EI or self.q != NUM_EMOTIONS:
            raise ValueError("t and q are fixed at 41 and 32")
        if self.layers < 1 or self.s < 1:
            raise ValueError("layers and s must be >= 1")
        if self.L_n < 2:
            raise ValueError("L_n must be >= 2")
        if self.L_s < 25:
            raise ValueError("L_s must leave room for 25 inferences")

    @property
    def n_positions(self) -> int:
        return max(self.L_n, self.L_s, self.max_decode)


@dataclass
class Ablation:
    no_utter_tagging: bool = False
    no_response_prediction: bool = False
    no_emotion_harmonization: bool = False
    no_knowledge: bool = False

    @classmethod
    def parse(cls, text: str | None) -> "Ablation":
        ab = cls()
        for flag in filter(None, (s.strip() for s in (text or "").split(","))):
            if flag not in ABLATIONS:
                raise BadFlag(f"unknown ablation {flag!r}; choose from {', '.join(ABLATIONS)}")
            setattr(ab, flag, True)
        return ab

    def active(self) -> list[str]:
        return [f for f in ABLATIONS if getattr(self, f)]


@dataclass
class TrainConfig:
    batch_size: int = 32
    base_lr: float = 1e-4  # used when noam is off
    noam: bool = True
    lr_factor: float = 1.0
    warmup_steps: int = 400
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.5
    patience: int = 3
    seed: int = 0
    max_epochs: int = 20
    max_steps: int = 0  # 0 -> unbounded
    min_freq: int = 1
    clip_norm: float = 0.0  # 0 -> no clipping
    ablation: Ablation = field(default_factory=Ablation)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")


def _coerce(value: str, kind):
    if kind is bool or kind == "bool":
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is int or kind == "int":
        return int(value)
    if kind is float or kind == "float":
        return float(value)
    return value


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadFlag(f"config line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_configs(values: Mapping[str, str]) -> tuple[ModelConfig, TrainConfig]:
    """Route flat keys to ModelConfig, TrainConfig or the ablation switches."""
    model_kw, train_kw, ab = {}, {}, Ablation()
    mtypes = {f.name: f.type for f in fields(ModelConfig)}
    ttypes = {f.name: f.type for f in fields(TrainConfig) if f.name != "ablation"}
    for k, v in values.items():
        try:
            if k in mtypes:
                model_kw[k] = _coerce(v, mtypes[k])
            elif k in ttypes:
                train_kw[k] = _coerce(v, ttypes[k])
            elif k in ABLATIONS:
                setattr(ab, k, _coerce(v, bool))
            elif k == "ablate":
                for flag in Ablation.parse(v).active():
                    setattr(ab, flag, True)
            else:
                raise BadFlag(f"unknown config key {k!r}")
        except ValueError as exc:
            raise BadFlag(f"{k}: {exc}") from exc
    try:
        return ModelConfig(**model_kw), TrainConfig(ablation=ab, **train_kw)
    except ValueError as exc:
        raise BadFlag(str(exc)) from exc


def load_config(path=None, overrides: Mapping[str, str] | None = None) -> tuple[ModelConfig, TrainConfig]:
    values: dict[str, str] = {}
    if path is not None:
        if not os.path.isfile(path):
            raise MissingFile(f"no config file at {path}")
        with open(path, encoding="utf-8") as fh:
            values.update(parse_key_values(fh.read()))
    values.update(overrides or {})
    return build_configs(values)


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def model_config_from_dict(d: Mapping) -> ModelConfig:
    return ModelConfig(**{k: v for k, v in d.items() if k in {f.name for f in fields(ModelConfig)}})


def train_config_from_dict(d: Mapping) -> TrainConfig:
    d = dict(d)
    ab = Ablation(**d.pop("ablation", {}))
    return TrainConfig(ablation=ab, **{k: v for k, v in d.items() if k in {f.name for f in fields(TrainConfig)}})
