"""Shared domain types, configuration schema, and validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
import torch


# ---------------------------------------------------------------------------
# Errors


class RGSLError(Exception):
    """Base class for all errors raised by this package."""


class NonPositiveDimension(RGSLError):
    pass


class InvalidTemperature(RGSLError):
    pass


class HorizonZero(RGSLError):
    pass


class BadShape(RGSLError):
    pass


class AllMissingColumn(RGSLError):
    pass


class NodeIdOutOfRange(RGSLError):
    pass


class EmptyEdgeList(RGSLError):
    pass


class NegativeCost(RGSLError):
    pass


class EmptyTrainSlice(RGSLError):
    pass


class SeriesTooShort(RGSLError):
    pass


class NonFiniteEmbedding(RGSLError):
    pass


class NegativeEntry(RGSLError):
    pass


class NonSquare(RGSLError):
    pass


class ShapeMismatch(RGSLError):
    pass


class AllMasked(RGSLError):
    pass


class DivergedLoss(RGSLError):
    pass


class ConfigMismatch(RGSLError):
    pass


class UnknownWhat(RGSLError):
    pass


# ---------------------------------------------------------------------------
# Domain types


@dataclass
class SeriesTensor:
    """Multivariate series, shape (T timestamps, N nodes, F features)."""

    values: np.ndarray
    timestamps_per_day: int = 288
    feature_names: list[str] = field(default_factory=lambda: ["flow"])

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise BadShape(f"series must be 3-D (T, N, F), got ndim={self.values.ndim}")
        t, n, f = self.values.shape
        if t < 1 or n < 2 or f < 1:
            raise BadShape(f"need T >= 1, N >= 2, F >= 1, got shape {(t, n, f)}")
        if not np.isfinite(self.values).all():
            raise BadShape("series contains NaN/Inf after cleaning")
        if self.timestamps_per_day < 1:
            raise NonPositiveDimension("timestamps_per_day must be positive")

    @property
    def n_timestamps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def n_features(self) -> int:
        return self.values.shape[2]


@dataclass
class ExplicitGraph:
    """Prior adjacency over N nodes, zero diagonal, non-negative weights."""

    adjacency: np.ndarray
    is_binary: bool = False
    source: str = "unknown"

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise NonSquare(f"adjacency must be square, got {a.shape}")
        if (a < 0).any():
            raise NegativeEntry("adjacency entries must be non-negative")
        if np.abs(np.diag(a)).max(initial=0.0) > 0:
            raise NegativeEntry("adjacency diagonal must be zero (self-loops added by the identity term)")

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]


class NodeEmbeddingTable(torch.nn.Module):
    """Trainable node embeddings (N x d) whose inner products give edge logits."""

    def __init__(self, n_nodes: int, embed_dim: int, dtype=torch.float32, init_scale: float = 0.1):
        super().__init__()
        if n_nodes < 2 or embed_dim < 1:
            raise NonPositiveDimension("need n_nodes >= 2 and embed_dim >= 1")
        self.embeddings = torch.nn.Parameter(
            torch.randn(n_nodes, embed_dim, dtype=dtype) * init_scale
        )

    @property
    def n_nodes(self) -> int:
        return self.embeddings.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embeddings.shape[1]

    def check_finite(self):
        if not torch.isfinite(self.embeddings).all():
            raise NonFiniteEmbedding("node embeddings contain NaN/Inf")


@dataclass
class RGSLConfig:
    """Run configuration; keys in config files match these field names exactly."""

    n_nodes: int | None = None
    embed_dim: int = 10
    hidden_dim: int = 64
    n_recurrent_layers: int = 2
    history_len: int = 12
    horizon: int = 12
    temperature: float = 0.5
    hard_sampling: bool = False
    deterministic_eval: bool = False
    symmetrize_sample: bool = False
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    early_stop_patience: int = 15
    grad_clip: float = 5.0
    eval_repeats: int = 5
    seed: int = 0
    mape_mask_threshold: float = 1e-3

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RGSLConfig":
        raw = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigMismatch(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path) -> "RGSLConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())


def validate_config(cfg: RGSLConfig) -> RGSLConfig:
    """Check field constraints and return the (unchanged) config."""
    if cfg.temperature <= 0:
        raise InvalidTemperature(f"temperature must be > 0, got {cfg.temperature}")
    if cfg.horizon < 1:
        raise HorizonZero(f"horizon must be >= 1, got {cfg.horizon}")
    positive = {
        "embed_dim": cfg.embed_dim,
        "hidden_dim": cfg.hidden_dim,
        "n_recurrent_layers": cfg.n_recurrent_layers,
        "history_len": cfg.history_len,
        "batch_size": cfg.batch_size,
        "max_epochs": cfg.max_epochs,
        "early_stop_patience": cfg.early_stop_patience,
        "eval_repeats": cfg.eval_repeats,
    }
    if cfg.n_nodes is not None:
        positive["n_nodes"] = cfg.n_nodes
    for name, value in positive.items():
        if value < 1:
            raise NonPositiveDimension(f"{name} must be positive, got {value}")
    if cfg.learning_rate < 0:
        raise NonPositiveDimension(f"learning_rate must be >= 0, got {cfg.learning_rate}")
    if cfg.grad_clip <= 0:
        raise NonPositiveDimension(f"grad_clip must be positive, got {cfg.grad_clip}")
    if cfg.mape_mask_threshold < 0:
        raise NonPositiveDimension("mape_mask_threshold must be >= 0")
    return cfg


@dataclass
class ScalerStats:
    """Per-feature mean/std fitted on the training split only."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape:
            raise ShapeMismatch("mean and std must have the same shape")
        if (self.std <= 0).any():
            raise NonPositiveDimension("std must be positive (floor applied at fit time)")

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(), "std": self.std.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ScalerStats":
        raw = json.loads(text)
        return cls(mean=np.array(raw["mean"]), std=np.array(raw["std"]))
