"""Loss, metric suite, optimization loop with early stopping, checkpointing."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass

import numpy as np
import torch

from .core import (
    AllMasked,
    ConfigMismatch,
    DivergedLoss,
    RGSLConfig,
    ScalerStats,
    ShapeMismatch,
    validate_config,
)
from .data import WindowSet
from .strgc import RGSLModel

CHECKPOINT_FORMAT_VERSION = 1
HISTORY_COLUMNS = ["epoch", "train_loss", "val_mae", "val_rmse", "val_mape",
                   "graph_density", "mean_alpha0"]


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    mape: float
    per_horizon: list[tuple[float, float, float]]
    eval_repeats: int = 1
    metric_std_over_repeats: dict | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def mae_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over all elements; inputs in the same (raw) units."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    return (pred - target).abs().mean()


def compute_metrics(pred: np.ndarray, target: np.ndarray,
                    mask_threshold: float = 1e-3) -> MetricsReport:
    """MAE / RMSE / masked MAPE, overall and per forecast horizon.

    MAPE averages |err / target| * 100 over entries with |target| >= threshold.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    mask = np.abs(target) >= mask_threshold
    if not mask.any():
        raise AllMasked("every target is below the MAPE mask threshold")

    def _three(p, t, m):
        err = p - t
        mae = float(np.abs(err).mean())
        rmse = float(np.sqrt((err ** 2).mean()))
        mape = float(np.abs(err[m] / t[m]).mean() * 100.0) if m.any() else float("nan")
        return mae, rmse, mape

    mae, rmse, mape = _three(pred, target, mask)
    per_horizon = []
    if pred.ndim >= 2:
        horizon_axis = 1 if pred.ndim >= 3 else 0
        for h in range(pred.shape[horizon_axis]):
            sl = np.take(pred, h, axis=horizon_axis), np.take(target, h, axis=horizon_axis), \
                np.take(mask, h, axis=horizon_axis)
            per_horizon.append(_three(*sl))
    return MetricsReport(mae=mae, rmse=rmse, mape=mape, per_horizon=per_horizon)


def _invert_predictions(pred: torch.Tensor, scaler: ScalerStats,
                        target_features: list[int]) -> torch.Tensor:
    mean = torch.as_tensor(scaler.mean[target_features], dtype=pred.dtype, device=pred.device)
    std = torch.as_tensor(scaler.std[target_features], dtype=pred.dtype, device=pred.device)
    return pred * std + mean


def _batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def predict_windows(model: RGSLModel, windows: WindowSet, batch_size: int = 256,
                    mode: str | None = None, generator=None) -> np.ndarray:
    """Forward every window, inverse-scale, return raw-unit predictions."""
    dtype = model.head.projection.dtype
    outs = []
    model.eval()
    with torch.no_grad():
        for idx in _batches(windows.n_windows, batch_size):
            xb = torch.as_tensor(windows.inputs[idx], dtype=dtype)
            pred = model(xb, mode=mode, generator=generator)
            pred = _invert_predictions(pred, windows.scaler, windows.target_features)
            outs.append(pred.cpu().numpy())
    return np.concatenate(outs, axis=0)


def evaluate(model: RGSLModel, windows: WindowSet, cfg: RGSLConfig,
             eval_repeats: int | None = None, base_seed: int | None = None) -> MetricsReport:
    """Run repeated forward passes (fresh graph sample each) and aggregate metrics.

    Reported values are means over repeats; metric_std_over_repeats carries
    the sampling-induced spread.
    """
    repeats = cfg.eval_repeats if eval_repeats is None else eval_repeats
    seed0 = cfg.seed if base_seed is None else base_seed
    maes, rmses, mapes, horizon_stack = [], [], [], []
    for k in range(repeats):
        gen = torch.Generator().manual_seed(seed0 * 100003 + k)
        pred = predict_windows(model, windows, batch_size=max(cfg.batch_size, 256), generator=gen)
        rep = compute_metrics(pred, windows.targets, cfg.mape_mask_threshold)
        maes.append(rep.mae)
        rmses.append(rep.rmse)
        mapes.append(rep.mape)
        horizon_stack.append(rep.per_horizon)
    per_horizon = [tuple(float(np.mean([h[r][c] for h in horizon_stack]))
                         for c in range(3))
                   for r in range(len(horizon_stack[0]))]
    return MetricsReport(
        mae=float(np.mean(maes)), rmse=float(np.mean(rmses)), mape=float(np.mean(mapes)),
        per_horizon=per_horizon, eval_repeats=repeats,
        metric_std_over_repeats={
            "mae": float(np.std(maes)), "rmse": float(np.std(rmses)), "mape": float(np.std(mapes)),
        },
    )


def fit(model: RGSLModel, train_set: WindowSet, val_set: WindowSet, cfg: RGSLConfig,
        max_steps: int | None = None):
    """Adam on raw-unit MAE with gradient clipping and early stopping.

    Returns (best_state_dict, history, best_val_mae); history rows follow
    HISTORY_COLUMNS. Raises DivergedLoss on a non-finite training loss.
    """
    validate_config(cfg)
    dtype = model.head.projection.dtype
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    data_rng = np.random.default_rng(cfg.seed)
    sample_gen = torch.Generator().manual_seed(cfg.seed)
    best_state = copy.deepcopy(model.state_dict())
    best_val_mae = float("inf")
    bad_epochs = 0
    history = []
    steps_done = 0
    for epoch in range(cfg.max_epochs):
        model.train()
        epoch_losses, densities, alphas = [], [], []
        for idx in _batches(train_set.n_windows, cfg.batch_size, rng=data_rng):
            xb = torch.as_tensor(train_set.inputs[idx], dtype=dtype)
            yb = torch.as_tensor(train_set.targets[idx], dtype=dtype)
            pred, stats = model(xb, generator=sample_gen, collect_stats=True)
            pred = _invert_predictions(pred, train_set.scaler, train_set.target_features)
            loss = mae_loss(pred, yb)
            if not torch.isfinite(loss):
                raise DivergedLoss(f"training loss became non-finite at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
            densities.append(stats["graph_density"])
            alphas.append(stats["mean_alpha0"])
            steps_done += 1
            if max_steps is not None and steps_done >= max_steps:
                break
        val = evaluate(model, val_set, cfg, eval_repeats=1, base_seed=cfg.seed + epoch)
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "val_mae": val.mae,
            "val_rmse": val.rmse,
            "val_mape": val.mape,
            "graph_density": float(np.mean(densities)),
            "mean_alpha0": float(np.mean(alphas)),
        })
        if val.mae < best_val_mae:
            best_val_mae = val.mae
            best_state = copy.deepcopy(model.state_dict())
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.early_stop_patience:
                break
        if max_steps is not None and steps_done >= max_steps:
            break
    model.load_state_dict(best_state)
    return best_state, history, best_val_mae


def write_history_csv(history: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            fh.write(",".join(repr(row[c]) if c != "epoch" else str(row[c])
                              for c in HISTORY_COLUMNS) + "\n")


def save_checkpoint(path, model: RGSLModel, cfg: RGSLConfig, explicit_adjacency: np.ndarray,
                    scaler: ScalerStats, target_features: list[int], epoch: int,
                    best_val_mae: float, optimizer=None) -> None:
    torch.save({
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": cfg.to_json(),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "explicit_adjacency": np.asarray(explicit_adjacency),
        "scaler": scaler.to_json(),
        "target_features": list(target_features),
        "in_dim": model.in_dim,
        "out_dim": model.out_dim,
        "epoch": epoch,
        "best_val_mae": best_val_mae,
    }, path)


def load_checkpoint(path, dtype=torch.float32):
    """Rebuild (model, config, scaler, payload) from a checkpoint file."""
    payload = torch.load(path, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigMismatch(
            f"checkpoint format_version {version} not supported (expect {CHECKPOINT_FORMAT_VERSION})")
    cfg = RGSLConfig.from_json(payload["config"])
    model = RGSLModel(cfg, payload["explicit_adjacency"],
                      in_dim=payload["in_dim"], out_dim=payload["out_dim"], dtype=dtype)
    model.load_state_dict(payload["model_state"])
    scaler = ScalerStats.from_json(payload["scaler"])
    return model, cfg, scaler, payload
