"""Spatio-temporal forecaster that learns a sparse inter-series graph.

Trainable node embeddings are sampled into a sparse adjacency through a
Gumbel-softmax relaxation, fused with a prior graph by an attention gate,
and fed to a graph-convolutional GRU for multi-horizon forecasting.
"""

from .core import RGSLConfig, ScalerStats, SeriesTensor, ExplicitGraph, validate_config
from .strgc import RGSLModel

__all__ = [
    "RGSLConfig",
    "RGSLModel",
    "ScalerStats",
    "SeriesTensor",
    "ExplicitGraph",
    "validate_config",
]

__version__ = "0.1.0"
