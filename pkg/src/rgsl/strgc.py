"""Recurrent graph-convolutional cell, stacked encoder, and the full forecaster.

The cell is a GRU whose gate pre-activations come from the fused graph
operator: z and r read [x_t, h_{t-1}], the candidate reads [r * h_{t-1}, x_t],
and h_t = z * h_{t-1} + (1 - z) * candidate.
"""

from __future__ import annotations

import numpy as np
import torch

from .core import NodeEmbeddingTable, RGSLConfig, ShapeMismatch
from .graphops import Propagator, normalize_adjacency
from .lm3 import LM3Gate
from .rgg import DETERMINISTIC, HARD, SOFT, LearnedGraphSample, edge_logits, sample_adjacency


class STRGCCell(torch.nn.Module):
    """One recurrent layer; three independently parameterized gate bundles."""

    def __init__(self, in_dim: int, hidden_dim: int, dtype=torch.float32):
        super().__init__()
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.update_gate = LM3Gate(in_dim + hidden_dim, hidden_dim, dtype=dtype)
        self.reset_gate = LM3Gate(in_dim + hidden_dim, hidden_dim, dtype=dtype)
        self.candidate = LM3Gate(in_dim + hidden_dim, hidden_dim, dtype=dtype)

    def forward(self, x_t: torch.Tensor, h_prev: torch.Tensor,
                p0: Propagator, pl: Propagator):
        """One step: x_t (..., N, in_dim), h_prev (..., N, hidden) -> h_t, alpha0 means."""
        if x_t.shape[-1] != self.in_dim:
            raise ShapeMismatch(f"expected input dim {self.in_dim}, got {x_t.shape[-1]}")
        xh = torch.cat([x_t, h_prev], dim=-1)
        z_pre, a0_z, _ = self.update_gate(p0, pl, xh)
        z = torch.sigmoid(z_pre)
        r_pre, a0_r, _ = self.reset_gate(p0, pl, xh)
        r = torch.sigmoid(r_pre)
        c_pre, a0_c, _ = self.candidate(p0, pl, torch.cat([r * h_prev, x_t], dim=-1))
        cand = torch.tanh(c_pre)
        h_t = z * h_prev + (1.0 - z) * cand
        alpha0_mean = torch.stack([a0_z.mean(), a0_r.mean(), a0_c.mean()]).mean()
        return h_t, alpha0_mean


class ForecastHead(torch.nn.Module):
    """Linear projection from the final hidden state to all horizons at once."""

    def __init__(self, hidden_dim: int, horizon: int, out_dim: int, dtype=torch.float32):
        super().__init__()
        self.horizon = horizon
        self.out_dim = out_dim
        self.projection = torch.nn.Parameter(
            torch.randn(hidden_dim, horizon * out_dim, dtype=dtype) * hidden_dim ** -0.5)
        self.bias = torch.nn.Parameter(torch.zeros(horizon * out_dim, dtype=dtype))

    def forward(self, h_final: torch.Tensor) -> torch.Tensor:
        """(..., N, hidden) -> (..., horizon, N, out_dim)."""
        out = h_final @ self.projection + self.bias
        out = out.reshape(*h_final.shape[:-1], self.horizon, self.out_dim)
        return out.movedim(-2, -3)


def encode(x: torch.Tensor, cells: torch.nn.ModuleList, p0: Propagator, pl: Propagator):
    """Unroll stacked cells over time; x is (B, T_in, N, F).

    One graph sample `pl` is shared across all timesteps and layers.
    Returns the last layer's final hidden state (B, N, hidden) and the mean
    explicit-branch mix weight across gates/steps/layers.
    """
    batch, t_in, n, _ = x.shape
    alpha_log = []
    seq = list(x.unbind(dim=1))
    h_last = None
    for cell in cells:
        h = x.new_zeros(batch, n, cell.hidden_dim)
        out_seq = []
        for x_t in seq:
            h, alpha0 = cell(x_t, h, p0, pl)
            out_seq.append(h)
            alpha_log.append(alpha0)
        seq = out_seq
        h_last = h
    return h_last, torch.stack(alpha_log).mean()


class RGSLModel(torch.nn.Module):
    """End-to-end forecaster: embeddings -> sampled graph -> recurrent encoder -> head."""

    def __init__(self, cfg: RGSLConfig, explicit_adjacency: np.ndarray,
                 in_dim: int = 1, out_dim: int = 1, dtype=torch.float32):
        super().__init__()
        n_nodes = explicit_adjacency.shape[0]
        if cfg.n_nodes is not None and cfg.n_nodes != n_nodes:
            raise ShapeMismatch(
                f"config says {cfg.n_nodes} nodes, explicit graph has {n_nodes}")
        self.cfg = cfg
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.node_embeddings = NodeEmbeddingTable(n_nodes, cfg.embed_dim, dtype=dtype)
        a0 = torch.as_tensor(explicit_adjacency, dtype=dtype)
        self.register_buffer("p0_matrix", normalize_adjacency(a0, "explicit").matrix)
        self.cells = torch.nn.ModuleList()
        for layer in range(cfg.n_recurrent_layers):
            layer_in = in_dim if layer == 0 else cfg.hidden_dim
            self.cells.append(STRGCCell(layer_in, cfg.hidden_dim, dtype=dtype))
        self.head = ForecastHead(cfg.hidden_dim, cfg.horizon, out_dim, dtype=dtype)

    @property
    def n_nodes(self) -> int:
        return self.node_embeddings.n_nodes

    def sampling_mode(self, override: str | None = None) -> str:
        if override is not None:
            return override
        if not self.training and self.cfg.deterministic_eval:
            return DETERMINISTIC
        return HARD if self.cfg.hard_sampling else SOFT

    def sample_graph(self, mode: str | None = None, generator=None,
                     noise: torch.Tensor | None = None) -> LearnedGraphSample:
        self.node_embeddings.check_finite()
        logits = edge_logits(self.node_embeddings.embeddings)
        sample = sample_adjacency(logits, self.cfg.temperature,
                                  mode=self.sampling_mode(mode),
                                  generator=generator, noise=noise)
        if self.cfg.symmetrize_sample:
            adj = 0.5 * (sample.adjacency + sample.adjacency.T)
            sample = LearnedGraphSample(adjacency=adj, temperature_used=sample.temperature_used,
                                        mode=sample.mode, rng_state_id=sample.rng_state_id)
        return sample

    def forward(self, x: torch.Tensor, mode: str | None = None, generator=None,
                noise: torch.Tensor | None = None, collect_stats: bool = False):
        """Forecast (B, T_in, N, F) -> (B, horizon, N, out_dim) in normalized units."""
        if x.ndim != 4:
            raise ShapeMismatch(f"expected (B, T_in, N, F), got shape {tuple(x.shape)}")
        if x.shape[2] != self.n_nodes:
            raise ShapeMismatch(f"expected {self.n_nodes} nodes, got {x.shape[2]}")
        sample = self.sample_graph(mode=mode, generator=generator, noise=noise)
        p0 = Propagator(matrix=self.p0_matrix, source="explicit")
        pl = normalize_adjacency(sample.adjacency, "learned")
        h_final, alpha0_mean = encode(x, self.cells, p0, pl)
        pred = self.head(h_final)
        if collect_stats:
            from .rgg import expected_density
            stats = {
                "graph_sample": sample,
                "mean_alpha0": float(alpha0_mean.detach()),
                "graph_density": expected_density(edge_logits(self.node_embeddings.embeddings).detach()),
            }
            return pred, stats
        return pred

    def force_mix_weights(self, alpha: tuple[float, float] | None) -> None:
        """Pin every gate's mix weights; None restores the learned gate (ablations)."""
        for cell in self.cells:
            for gate in (cell.update_gate, cell.reset_gate, cell.candidate):
                gate.force_alpha = alpha
