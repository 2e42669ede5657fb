"""Emotion-flow empathetic dialogue model with a self-contained autodiff core."""

from .config import Ablation, ModelConfig, TrainConfig
from .model import SeekModel, forward, init_params, prepare

__version__ = "0.1.0"
