"""Dataset ingestion, explicit-graph construction, normalization, windowing, synthesis."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    AllMissingColumn,
    BadShape,
    EmptyEdgeList,
    EmptyTrainSlice,
    ExplicitGraph,
    NegativeCost,
    NodeIdOutOfRange,
    ScalerStats,
    SeriesTensor,
    SeriesTooShort,
    ShapeMismatch,
)

SPLIT_RATIOS = (0.6, 0.2, 0.2)
STD_FLOOR = 1e-8


def load_series_archive(path, timestamps_per_day: int = 288) -> SeriesTensor:
    """Load an npz archive holding a single (T, N, F) array under key "data".

    NaNs are repaired by linear interpolation along time; leading/trailing
    NaNs take the column mean. A column with no finite value at all is an error.
    """
    with np.load(path) as archive:
        if "data" not in archive:
            raise BadShape(f"archive {path} has no 'data' array (keys: {list(archive.keys())})")
        values = np.asarray(archive["data"], dtype=np.float64)
    if values.ndim != 3:
        raise BadShape(f"expected 3-D (T, N, F) array, got shape {values.shape}")
    values = _clean_nans(values)
    return SeriesTensor(values=values, timestamps_per_day=timestamps_per_day)


def save_series_archive(series: SeriesTensor, path) -> None:
    np.savez_compressed(path, data=series.values)


def _clean_nans(values: np.ndarray) -> np.ndarray:
    if np.isfinite(values).all():
        return values
    out = values.copy()
    out[~np.isfinite(out)] = np.nan
    t = out.shape[0]
    idx = np.arange(t)
    for n in range(out.shape[1]):
        for f in range(out.shape[2]):
            col = out[:, n, f]
            good = np.isfinite(col)
            if not good.any():
                raise AllMissingColumn(f"node {n}, feature {f} has no finite values")
            if good.all():
                continue
            # interior NaNs: linear interpolation; edges: column mean
            fill = col[good].mean()
            col[~good] = np.interp(idx[~good], idx[good], col[good])
            first, last = idx[good][0], idx[good][-1]
            if first > 0:
                col[:first] = fill
            if last < t - 1:
                col[last + 1:] = fill
            out[:, n, f] = col
    return out


def build_explicit_graph(distance_csv, rule: str, threshold: float, n_nodes: int) -> ExplicitGraph:
    """Build the prior adjacency from a "from,to,cost" edge-list CSV.

    gaussian-kernel: w_ij = exp(-d_ij^2 / sigma^2), sigma = std of all costs,
    entries below `threshold` zeroed. binary: w_ij = 1 for listed edges.
    Result has zero diagonal and is symmetrized by max(w_ij, w_ji).
    """
    if rule not in ("gaussian-kernel", "binary"):
        raise ValueError(f"unknown rule {rule!r}")
    edges = []
    with open(distance_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            i, j, cost = int(row["from"]), int(row["to"]), float(row["cost"])
            if not (0 <= i < n_nodes and 0 <= j < n_nodes):
                raise NodeIdOutOfRange(f"edge ({i},{j}) outside [0, {n_nodes})")
            if cost < 0:
                raise NegativeCost(f"edge ({i},{j}) has negative cost {cost}")
            edges.append((i, j, cost))
    if not edges:
        raise EmptyEdgeList(f"{distance_csv} holds no edges")

    adj = np.zeros((n_nodes, n_nodes))
    if rule == "binary":
        for i, j, _ in edges:
            adj[i, j] = 1.0
        is_binary = True
    else:
        costs = np.array([c for _, _, c in edges])
        sigma = costs.std()
        if sigma == 0:
            sigma = 1.0
        for i, j, cost in edges:
            adj[i, j] = np.exp(-(cost ** 2) / sigma ** 2)
        adj[adj < threshold] = 0.0
        if adj.max() == 0.0:
            warnings.warn("all kernel weights fell below threshold; explicit graph is empty")
        is_binary = False
    np.fill_diagonal(adj, 0.0)
    adj = np.maximum(adj, adj.T)
    return ExplicitGraph(adjacency=adj, is_binary=is_binary,
                         source=f"{distance_csv}:{rule}:threshold={threshold}")


def fit_scaler(train_slice: SeriesTensor | np.ndarray) -> ScalerStats:
    """Per-feature mean/std over all timestamps and nodes; std floored at 1e-8."""
    values = train_slice.values if isinstance(train_slice, SeriesTensor) else np.asarray(train_slice)
    if values.size == 0:
        raise EmptyTrainSlice("cannot fit scaler on an empty training slice")
    mean = values.mean(axis=(0, 1))
    std = np.maximum(values.std(axis=(0, 1)), STD_FLOOR)
    return ScalerStats(mean=mean, std=std)


@dataclass
class WindowSet:
    """Sliding windows of one chronological split.

    inputs (B, T_in, N, F) normalized; targets (B, tau, N, F_out) in raw units.
    """

    inputs: np.ndarray
    targets: np.ndarray
    scaler: ScalerStats
    target_features: list[int]

    @property
    def n_windows(self) -> int:
        return self.inputs.shape[0]


def split_boundaries(n_timestamps: int, ratios=SPLIT_RATIOS) -> tuple[int, int]:
    train_end = int(n_timestamps * ratios[0])
    val_end = int(n_timestamps * (ratios[0] + ratios[1]))
    return train_end, val_end


def make_windows(series: SeriesTensor, scaler: ScalerStats, history_len: int, horizon: int,
                 split: str, ratios=SPLIT_RATIOS, target_features=(0,)) -> WindowSet:
    """Window one split with stride 1; windows never cross split boundaries."""
    t = series.n_timestamps
    train_end, val_end = split_boundaries(t, ratios)
    bounds = {"train": (0, train_end), "val": (train_end, val_end), "test": (val_end, t)}
    if split not in bounds:
        raise ValueError(f"split must be train/val/test, got {split!r}")
    lo, hi = bounds[split]
    span = hi - lo
    if span < history_len + horizon:
        raise SeriesTooShort(
            f"{split} split has {span} timestamps, need >= {history_len + horizon}")
    raw = series.values[lo:hi]
    norm = scaler.apply(raw)
    b = span - history_len - horizon + 1
    target_features = list(target_features)
    inputs = np.stack([norm[k:k + history_len] for k in range(b)])
    targets = np.stack([raw[k + history_len:k + history_len + horizon][:, :, target_features]
                        for k in range(b)])
    return WindowSet(inputs=inputs, targets=targets, scaler=scaler,
                     target_features=target_features)


def synth_dataset(n_nodes: int, true_graph: ExplicitGraph, length: int, noise_std: float,
                  seed: int, x0: np.ndarray | None = None) -> tuple[SeriesTensor, ExplicitGraph]:
    """Simulate x_t = 0.5 x_{t-1} + 0.4 A_hat x_{t-1} + eps with row-normalized coupling.

    Returns the series (length, n_nodes, 1) plus the ground-truth graph so
    recovered edges can be scored against it.
    """
    adj = true_graph.adjacency
    if adj.shape[0] != n_nodes:
        raise ShapeMismatch(f"true_graph shape {adj.shape} does not match n_nodes={n_nodes}")
    row_sums = adj.sum(axis=1, keepdims=True)
    a_hat = np.divide(adj, row_sums, out=np.zeros_like(adj), where=row_sums > 0)
    rng = np.random.default_rng(seed)
    x = np.empty((length, n_nodes))
    x_prev = np.ones(n_nodes) if x0 is None else np.asarray(x0, dtype=np.float64)
    for t in range(length):
        eps = rng.normal(0.0, noise_std, size=n_nodes) if noise_std > 0 else 0.0
        x_prev = 0.5 * x_prev + 0.4 * (a_hat @ x_prev) + eps
        x[t] = x_prev
    series = SeriesTensor(values=x[:, :, None], timestamps_per_day=288)
    return series, true_graph


def ring_graph(n_nodes: int) -> ExplicitGraph:
    """Undirected ring over n_nodes; handy ground truth for synthetic runs."""
    adj = np.zeros((n_nodes, n_nodes))
    for i in range(n_nodes):
        adj[i, (i + 1) % n_nodes] = 1.0
        adj[(i + 1) % n_nodes, i] = 1.0
    return ExplicitGraph(adjacency=adj, is_binary=True, source=f"ring({n_nodes})")
