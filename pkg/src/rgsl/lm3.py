"""Attention-gated convex fusion of the explicit and learned graph branches.

Each branch output is scored per node by a shared linear head; a two-way
softmax over the scores gives convex weights (alpha0 + alphal = 1), and the
fused output is the weighted sum of the two branch outputs.
"""

from __future__ import annotations

import torch

from .core import ShapeMismatch
from .graphops import BranchParams, Propagator, graph_transform


class MixAttentionParams(torch.nn.Module):
    """Shared scoring head: one weight column per feature plus a scalar bias."""

    def __init__(self, feature_dim: int, dtype=torch.float32):
        super().__init__()
        self.score_weight = torch.nn.Parameter(
            torch.randn(feature_dim, 1, dtype=dtype) * feature_dim ** -0.5)
        self.score_bias = torch.nn.Parameter(torch.zeros(1, dtype=dtype))


def mix(h0: torch.Tensor, hl: torch.Tensor, params: MixAttentionParams,
        force_alpha: tuple[float, float] | None = None):
    """Convex per-node combination of the two branch outputs.

    Returns (output, alpha0, alphal) with alpha shapes (..., N, 1); pass
    `force_alpha` to pin the weights (ablation wiring).
    """
    if h0.shape != hl.shape:
        raise ShapeMismatch(f"branch outputs differ: {tuple(h0.shape)} vs {tuple(hl.shape)}")
    if force_alpha is not None:
        a0 = torch.as_tensor(force_alpha[0], dtype=h0.dtype, device=h0.device)
        al = torch.as_tensor(force_alpha[1], dtype=h0.dtype, device=h0.device)
        return a0 * h0 + al * hl, a0.expand(*h0.shape[:-1], 1), al.expand(*h0.shape[:-1], 1)
    e0 = h0 @ params.score_weight + params.score_bias
    el = hl @ params.score_weight + params.score_bias
    alphas = torch.softmax(torch.stack([e0, el], dim=-1), dim=-1)
    a0, al = alphas[..., 0], alphas[..., 1]
    return a0 * h0 + al * hl, a0, al


def lm3_forward(p0: Propagator, pl: Propagator, x: torch.Tensor,
                b0: BranchParams, bl: BranchParams, attn: MixAttentionParams,
                force_alpha: tuple[float, float] | None = None):
    """Compose the two graph transforms and gate them; the operator fed to the cell."""
    h0 = graph_transform(p0, x, b0)
    hl = graph_transform(pl, x, bl)
    return mix(h0, hl, attn, force_alpha=force_alpha)


class LM3Gate(torch.nn.Module):
    """One gate bundle: explicit branch, learned branch, shared attention head."""

    def __init__(self, in_dim: int, out_dim: int, dtype=torch.float32):
        super().__init__()
        self.explicit = BranchParams(in_dim, out_dim, dtype=dtype)
        self.learned = BranchParams(in_dim, out_dim, dtype=dtype)
        self.attention = MixAttentionParams(out_dim, dtype=dtype)
        self.force_alpha: tuple[float, float] | None = None

    def forward(self, p0: Propagator, pl: Propagator, x: torch.Tensor):
        return lm3_forward(p0, pl, x, self.explicit, self.learned, self.attention,
                           force_alpha=self.force_alpha)
