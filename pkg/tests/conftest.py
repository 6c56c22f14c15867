import numpy as np
import pytest
import torch

from rgsl.core import RGSLConfig
from rgsl.strgc import RGSLModel


def make_flow_like_series(n_nodes=50, days=7, timestamps_per_day=288, seed=0):
    """Traffic-flow-shaped array (T, N, 1): daily profile + AR(1) noise, raw units."""
    rng = np.random.default_rng(seed)
    t = days * timestamps_per_day
    phase = rng.uniform(0, 2 * np.pi, size=n_nodes)
    level = rng.uniform(100.0, 400.0, size=n_nodes)
    amp = rng.uniform(30.0, 120.0, size=n_nodes)
    tod = 2 * np.pi * np.arange(t) / timestamps_per_day
    base = level[None, :] + amp[None, :] * np.sin(tod[:, None] + phase[None, :])
    noise = np.zeros((t, n_nodes))
    eps = rng.normal(0, 8.0, size=(t, n_nodes))
    for k in range(1, t):
        noise[k] = 0.9 * noise[k - 1] + eps[k]
    return np.clip(base + noise, 0, None)[:, :, None]


def tiny_config(**overrides):
    base = dict(n_nodes=4, embed_dim=2, hidden_dim=3, n_recurrent_layers=2,
                history_len=3, horizon=2, batch_size=4, max_epochs=2,
                early_stop_patience=2, seed=0)
    base.update(overrides)
    return RGSLConfig(**base)


def tiny_model(cfg=None, explicit=None, in_dim=1, out_dim=1, dtype=torch.float64, seed=0):
    cfg = cfg or tiny_config()
    if explicit is None:
        n = cfg.n_nodes
        explicit = np.zeros((n, n))
        explicit[0, 1] = explicit[1, 0] = 1.0
    torch.manual_seed(seed)
    return RGSLModel(cfg, explicit, in_dim=in_dim, out_dim=out_dim, dtype=dtype)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
