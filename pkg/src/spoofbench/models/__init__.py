"""Registry of the twelve detectors and the uniform build / forward / score contract.

Every model maps a batch to (batch, 2) logits; column 0 is spoof, column 1
bonafide. Spectral models take (B, 513, frames), raw models (B, samples).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any

import numpy as np
import torch
import torch.nn as nn
import yaml

from ..errors import IncompatibleConfig, InputTooShort, ShapeMismatch, UnknownModelId
from .raw import CRNNSpoof, RawGATST, RawNet2, RawPC
from .spectral import (
    LCNN,
    LCNNAttention,
    LCNNLSTM,
    LSTMDetector,
    MesoInception,
    MesoNet,
    ResNet18,
    TransformerDetector,
)

REGISTRY: dict[str, type[nn.Module]] = {
    "LSTM": LSTMDetector,
    "LCNN": LCNN,
    "LCNN_ATTENTION": LCNNAttention,
    "LCNN_LSTM": LCNNLSTM,
    "MESONET": MesoNet,
    "MESOINCEPTION": MesoInception,
    "RESNET18": ResNet18,
    "TRANSFORMER": TransformerDetector,
    "CRNNSPOOF": CRNNSpoof,
    "RAWNET2": RawNet2,
    "RAWPC": RawPC,
    "RAWGAT_ST": RawGATST,
}
MODEL_IDS = tuple(REGISTRY)
SPECTRAL_MODELS = MODEL_IDS[:8]
RAW_MODELS = MODEL_IDS[8:]
SPOOF, BONAFIDE = 0, 1


@lru_cache(maxsize=1)
def _layer_ledger() -> dict[str, dict[str, Any]]:
    text = resources.files(__package__).joinpath("architectures.yaml").read_text()
    return yaml.safe_load(text)


def reference_hyperparams(model_id: str) -> dict[str, Any]:
    if model_id not in REGISTRY:
        raise UnknownModelId(model_id)
    params = copy.deepcopy(_layer_ledger()[model_id])
    params.pop("input_kind")
    return params


def native_input_kind(model_id: str) -> str:
    if model_id not in REGISTRY:
        raise UnknownModelId(model_id)
    return _layer_ledger()[model_id]["input_kind"]


@dataclass
class ModelConfig:
    model_id: str
    input_kind: str | None = None
    init_seed: int = 0
    hyperparams: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.model_id not in REGISTRY:
            raise UnknownModelId(self.model_id)
        native = native_input_kind(self.model_id)
        if self.input_kind is None:
            self.input_kind = native
        elif self.input_kind != native:
            raise IncompatibleConfig(
                f"{self.model_id} takes {native} input, not {self.input_kind}")

    def resolved_hyperparams(self) -> dict[str, Any]:
        params = reference_hyperparams(self.model_id)
        unknown = set(self.hyperparams) - set(params)
        if unknown:
            raise IncompatibleConfig(f"{self.model_id}: unknown hyperparameters {sorted(unknown)}")
        params.update(self.hyperparams)
        for key, value in params.items():
            flat = np.ravel(value) if isinstance(value, (list, tuple)) else [value]
            lowest = 0 if key == "dropout" else 1e-12
            if any(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) and v < lowest
                   for v in flat):
                raise IncompatibleConfig(f"{self.model_id}: {key} must be positive")
        return params


@dataclass
class Batch:
    utt_ids: list[str]
    inputs: np.ndarray  # (B, bins, frames); bins == 1 for raw input
    lengths: list[int]
    labels: np.ndarray | None = None  # 0 spoof, 1 bonafide

    def __post_init__(self):
        if len(self.utt_ids) == 0:
            raise ShapeMismatch("empty batch")
        if self.inputs.ndim != 3 or self.inputs.shape[0] != len(self.utt_ids):
            raise ShapeMismatch(f"batch inputs must be (B, bins, frames), got {self.inputs.shape}")

    def __len__(self) -> int:
        return len(self.utt_ids)


def build(config: ModelConfig) -> nn.Module:
    """Instantiate a model with parameters drawn from ``config.init_seed``.

    Uses a forked RNG so the global torch stream is left untouched.
    """
    params = config.resolved_hyperparams()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.init_seed)
        model = REGISTRY[config.model_id](**params)
    model.config = config
    model.n_bins = params.get("n_bins", 1)
    return model


def to_tensor(model: nn.Module, batch: Batch) -> torch.Tensor:
    x = torch.as_tensor(batch.inputs, dtype=torch.float32)
    if model.input_kind == "raw":
        if x.shape[1] != 1:
            raise ShapeMismatch(f"raw model expects (B, 1, samples), got {tuple(x.shape)}")
        x = x[:, 0]
    else:
        if x.shape[1] != model.n_bins:
            raise ShapeMismatch(f"spectral model expects {model.n_bins} bins, got {x.shape[1]}")
    if x.shape[-1] < model.min_frames:
        raise InputTooShort(model.min_frames, x.shape[-1])
    return x


def forward(model: nn.Module, batch: Batch) -> torch.Tensor:
    return model(to_tensor(model, batch))


def score(logits: torch.Tensor | np.ndarray) -> np.ndarray:
    """Bonafide log-posterior per row; higher means more bonafide."""
    logits = torch.as_tensor(logits, dtype=torch.float64)
    return torch.log_softmax(logits, dim=-1)[:, BONAFIDE].detach().numpy()


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def compatible(model_id: str, feature_kind: str) -> bool:
    return (feature_kind == "raw") == (native_input_kind(model_id) == "raw")
