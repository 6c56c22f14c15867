"""Regularized graph generation: node embeddings -> sampled sparse adjacency.

The embedding inner product E @ E.T is treated directly as the edge
log-odds; sampling pushes it through a binary-concrete (Gumbel) relaxation
with temperature s, so hard samples keep edge (i, j) with probability
sigmoid(logit_ij) regardless of s.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import torch

from .core import InvalidTemperature, NonFiniteEmbedding

SOFT = "soft"
HARD = "hard-straight-through"
DETERMINISTIC = "deterministic"
MODES = (SOFT, HARD, DETERMINISTIC)


@dataclass
class LearnedGraphSample:
    adjacency: torch.Tensor  # (N, N), entries in [0, 1], zero diagonal
    temperature_used: float
    mode: str
    rng_state_id: str


def edge_logits(embeddings: torch.Tensor) -> torch.Tensor:
    """Edge log-odds E @ E.T; diagonal kept here, zeroed at sampling."""
    if not torch.isfinite(embeddings).all():
        raise NonFiniteEmbedding("embeddings contain NaN/Inf")
    return embeddings @ embeddings.T


def gumbel_noise_difference(shape, generator=None, dtype=torch.float32) -> torch.Tensor:
    """Draw g1 - g2 with g1, g2 ~ Gumbel(0, 1) i.i.d. (a standard logistic)."""
    u1 = torch.rand(shape, generator=generator, dtype=dtype)
    u2 = torch.rand(shape, generator=generator, dtype=dtype)
    g1 = -torch.log((-torch.log(u1.clamp_min(1e-12))).clamp_min(1e-12))
    g2 = -torch.log((-torch.log(u2.clamp_min(1e-12))).clamp_min(1e-12))
    return g1 - g2


def sample_adjacency(logits: torch.Tensor, temperature: float, mode: str = SOFT,
                     generator=None, noise: torch.Tensor | None = None) -> LearnedGraphSample:
    """Sample a relaxed adjacency a_ij = sigmoid((logit_ij + g1 - g2) / s).

    soft: return the relaxation as-is. hard-straight-through: round to {0,1}
    forward, keep the soft gradient. deterministic: no noise, sigmoid(logit/s).
    Pass `noise` to freeze the Gumbel draw (gradient checks, replay).
    """
    if temperature <= 0:
        raise InvalidTemperature(f"temperature must be > 0, got {temperature}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == DETERMINISTIC:
        soft = torch.sigmoid(logits / temperature)
        rng_id = "deterministic"
    else:
        if noise is None:
            noise = gumbel_noise_difference(logits.shape, generator=generator, dtype=logits.dtype)
            rng_id = f"gen:{generator.initial_seed()}" if generator is not None else "global"
        else:
            rng_id = "frozen"
        soft = torch.sigmoid((logits + noise) / temperature)
    if mode == HARD:
        hard = (soft > 0.5).to(soft.dtype)
        adj = hard + (soft - soft.detach())  # exact zero forward, soft backward
    else:
        adj = soft
    off_diag = 1.0 - torch.eye(adj.shape[0], dtype=adj.dtype, device=adj.device)
    adj = adj * off_diag
    return LearnedGraphSample(adjacency=adj, temperature_used=float(temperature),
                              mode=mode, rng_state_id=rng_id)


def keep_probabilities(logits: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(logits)


def expected_density(logits: torch.Tensor) -> float:
    """Mean keep-probability over off-diagonal entries."""
    n = logits.shape[0]
    probs = torch.sigmoid(logits)
    mask = ~torch.eye(n, dtype=torch.bool, device=logits.device)
    return float(probs[mask].mean())


def export_matrix_csv(matrix: torch.Tensor, path) -> None:
    """Full N x N matrix, one row per line."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix.detach().cpu().numpy():
            writer.writerow([f"{v:.8g}" for v in row])


def export_edge_list_csv(matrix: torch.Tensor, threshold: float, path) -> None:
    """Edge list "i,j,weight" for off-diagonal entries >= threshold."""
    m = matrix.detach().cpu().numpy()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "weight"])
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                if i != j and m[i, j] >= threshold:
                    writer.writerow([i, j, f"{m[i, j]:.8g}"])
