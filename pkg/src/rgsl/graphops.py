"""Normalized graph propagation: I + D^{-1/2} A D^{-1/2} and its feature transform."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .core import NegativeEntry, NonSquare, ShapeMismatch

DEGREE_FLOOR = 1e-8


@dataclass
class Propagator:
    matrix: torch.Tensor  # (N, N) = I + D^{-1/2} A D^{-1/2}
    source: str  # "explicit" | "learned"


def normalize_adjacency(adjacency: torch.Tensor, source: str,
                        degree_floor: float = DEGREE_FLOOR) -> Propagator:
    """Build I + D^{-1/2} A D^{-1/2} with row-sum degrees floored for isolated nodes.

    Differentiable w.r.t. `adjacency`, so soft graph samples keep their gradient.
    """
    if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
        raise NonSquare(f"adjacency must be square, got {tuple(adjacency.shape)}")
    with torch.no_grad():
        if (adjacency < 0).any():
            raise NegativeEntry("adjacency entries must be non-negative")
    n = adjacency.shape[0]
    deg = adjacency.sum(dim=1).clamp_min(degree_floor)
    inv_sqrt = deg.pow(-0.5)
    eye = torch.eye(n, dtype=adjacency.dtype, device=adjacency.device)
    matrix = eye + inv_sqrt[:, None] * adjacency * inv_sqrt[None, :]
    return Propagator(matrix=matrix, source=source)


class BranchParams(torch.nn.Module):
    """Weight (in_dim x out_dim) and bias for one graph branch."""

    def __init__(self, in_dim: int, out_dim: int, dtype=torch.float32):
        super().__init__()
        scale = in_dim ** -0.5
        self.weight = torch.nn.Parameter(torch.randn(in_dim, out_dim, dtype=dtype) * scale)
        self.bias = torch.nn.Parameter(torch.zeros(out_dim, dtype=dtype))


def graph_transform(propagator: Propagator, x: torch.Tensor,
                    params: BranchParams) -> torch.Tensor:
    """P @ X @ W + b; X may carry leading batch dimensions before (N, in_dim)."""
    if x.shape[-2] != propagator.matrix.shape[0]:
        raise ShapeMismatch(
            f"node dim mismatch: X has {x.shape[-2]} nodes, propagator {propagator.matrix.shape[0]}")
    if x.shape[-1] != params.weight.shape[0]:
        raise ShapeMismatch(
            f"feature dim mismatch: X has {x.shape[-1]}, weight expects {params.weight.shape[0]}")
    return torch.matmul(propagator.matrix, x) @ params.weight + params.bias
