"""Command-line pipeline: prepare, train, eval, predict, export-graph."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from . import rgg, train as train_mod
from .core import (
    ConfigMismatch,
    DivergedLoss,
    ExplicitGraph,
    RGSLConfig,
    RGSLError,
    ScalerStats,
    UnknownWhat,
    validate_config,
)
from .strgc import RGSLModel

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIVERGED = 3
EXIT_MISMATCH = 4


def _out_root(path_arg) -> Path:
    if path_arg:
        return Path(path_arg)
    return Path(os.environ.get("RGSL_OUT", "."))


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, config_path, cfg: RGSLConfig | None,
                   dataset_path, seed) -> Path:
    """Reproducibility record, written before any long-running work starts."""
    manifest = {
        "command": command,
        "config_path": str(config_path) if config_path else None,
        "config_hash": hashlib.sha256(cfg.to_json().encode()).hexdigest() if cfg else None,
        "dataset_fingerprint": _sha256_file(dataset_path) if dataset_path else None,
        "seed": seed,
        "output_dir": str(out_dir),
        "started_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _write_matrix_csv(matrix: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([f"{v:.8g}" for v in row])


def _read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])


def cmd_prepare(args) -> int:
    out_dir = _out_root(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        true_graph = data_mod.ring_graph(args.n_nodes)
        series, _ = data_mod.synth_dataset(args.n_nodes, true_graph, args.length,
                                           args.noise_std, args.seed)
        # the prior stays empty so learned edges are not handed the answer
        explicit = np.zeros((args.n_nodes, args.n_nodes))
        _write_matrix_csv(true_graph.adjacency, out_dir / "true_graph.csv")
        dataset_path = None
    else:
        series = data_mod.load_series_archive(args.data)
        graph = data_mod.build_explicit_graph(args.distances, args.rule, args.threshold,
                                              series.n_nodes)
        explicit = graph.adjacency
        dataset_path = args.data
    write_manifest(out_dir, "prepare", None, None, dataset_path, args.seed)
    data_mod.save_series_archive(series, out_dir / "series.npz")
    _write_matrix_csv(explicit, out_dir / "explicit_graph.csv")
    train_end, val_end = data_mod.split_boundaries(series.n_timestamps)
    scaler = data_mod.fit_scaler(series.values[:train_end])
    (out_dir / "scaler.json").write_text(scaler.to_json())
    (out_dir / "splits.json").write_text(json.dumps({
        "n_timestamps": series.n_timestamps,
        "train_end": train_end,
        "val_end": val_end,
        "ratios": list(data_mod.SPLIT_RATIOS),
    }, indent=2))
    print(f"prepared {series.n_timestamps} timestamps, {series.n_nodes} nodes -> {out_dir}")
    return EXIT_OK


def _load_prepared(prepared: Path):
    series = data_mod.load_series_archive(prepared / "series.npz")
    explicit = _read_matrix_csv(prepared / "explicit_graph.csv")
    scaler = ScalerStats.from_json((prepared / "scaler.json").read_text())
    return series, explicit, scaler


def cmd_train(args) -> int:
    prepared = Path(args.prepared)
    cfg = RGSLConfig.from_file(args.config) if args.config else RGSLConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    validate_config(cfg)
    out_dir = _out_root(args.out)
    write_manifest(out_dir, "train", args.config, cfg, prepared / "series.npz", cfg.seed)
    series, explicit, scaler = _load_prepared(prepared)
    train_set = data_mod.make_windows(series, scaler, cfg.history_len, cfg.horizon, "train")
    val_set = data_mod.make_windows(series, scaler, cfg.history_len, cfg.horizon, "val")
    torch.manual_seed(cfg.seed)
    model = RGSLModel(cfg, explicit, in_dim=series.n_features, out_dim=len(train_set.target_features))
    _, history, best_val_mae = train_mod.fit(model, train_set, val_set, cfg,
                                             max_steps=args.max_steps)
    train_mod.write_history_csv(history, out_dir / "history.csv")
    train_mod.save_checkpoint(out_dir / "best.ckpt", model, cfg, explicit, scaler,
                              train_set.target_features, epoch=len(history),
                              best_val_mae=best_val_mae)
    report = train_mod.evaluate(model, val_set, cfg)
    (out_dir / "val_metrics.json").write_text(json.dumps(report.to_dict(), indent=2))
    print(f"trained {len(history)} epochs, best val MAE {best_val_mae:.4f} -> {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cfg, scaler, _ = train_mod.load_checkpoint(args.checkpoint)
    prepared = Path(args.prepared)
    series, explicit, _ = _load_prepared(prepared)
    if series.n_nodes != model.n_nodes:
        raise ConfigMismatch(
            f"checkpoint has {model.n_nodes} nodes, prepared data has {series.n_nodes}")
    out_dir = _out_root(args.out)
    write_manifest(out_dir, "eval", None, cfg, prepared / "series.npz", cfg.seed)
    test_set = data_mod.make_windows(series, scaler, cfg.history_len, cfg.horizon, args.split)
    report = train_mod.evaluate(model, test_set, cfg, eval_repeats=args.repeats)
    path = out_dir / "metrics.json"
    path.write_text(json.dumps(report.to_dict(), indent=2))
    print(json.dumps({"mae": report.mae, "rmse": report.rmse, "mape": report.mape}))
    return EXIT_OK


def cmd_predict(args) -> int:
    model, cfg, scaler, payload = train_mod.load_checkpoint(args.checkpoint)
    series = data_mod.load_series_archive(args.input)
    if series.n_nodes != model.n_nodes:
        raise ConfigMismatch(
            f"checkpoint has {model.n_nodes} nodes, input has {series.n_nodes}")
    if series.n_timestamps < cfg.history_len:
        raise ConfigMismatch(
            f"input has {series.n_timestamps} timestamps, need >= {cfg.history_len}")
    window = scaler.apply(series.values[-cfg.history_len:])
    x = torch.as_tensor(window[None], dtype=torch.float32)
    gen = torch.Generator().manual_seed(cfg.seed)
    model.eval()
    with torch.no_grad():
        pred = model(x, generator=gen)
    mean = scaler.mean[payload["target_features"]]
    std = scaler.std[payload["target_features"]]
    forecast = pred[0].numpy() * std + mean  # (horizon, N, F_out)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out, data=forecast)
    with open(out.with_suffix(".csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["horizon", "node", "feature", "value"])
        for h in range(forecast.shape[0]):
            for n in range(forecast.shape[1]):
                for f in range(forecast.shape[2]):
                    writer.writerow([h, n, f, f"{forecast[h, n, f]:.8g}"])
    print(f"forecast shape {forecast.shape} -> {out}")
    return EXIT_OK


def cmd_export_graph(args) -> int:
    model, cfg, _, payload = train_mod.load_checkpoint(args.checkpoint)
    if args.what == "probs":
        matrix = rgg.keep_probabilities(
            rgg.edge_logits(model.node_embeddings.embeddings)).detach()
    elif args.what == "sample":
        gen = torch.Generator().manual_seed(args.seed)
        matrix = model.sample_graph(generator=gen).adjacency.detach()
    elif args.what == "explicit":
        matrix = torch.as_tensor(payload["explicit_adjacency"])
    else:
        raise UnknownWhat(f"--what must be probs|sample|explicit, got {args.what!r}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".png":
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(6, 6))
        ax.imshow(matrix.numpy(), cmap="gray_r")
        ax.set_xlabel("node")
        ax.set_ylabel("node")
        fig.savefig(out, dpi=150, bbox_inches="tight")
        plt.close(fig)
    elif args.threshold is not None:
        rgg.export_edge_list_csv(matrix, args.threshold, out)
    else:
        rgg.export_matrix_csv(matrix, out)
    print(f"exported {args.what} -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgsl",
                                     description="Graph structure learning forecaster")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="clean data, build explicit graph, fit scaler, index splits")
    p.add_argument("--data", help="series archive (.npz with 'data' array)")
    p.add_argument("--distances", help="edge-list CSV 'from,to,cost'")
    p.add_argument("--rule", choices=["gaussian-kernel", "binary"], default="gaussian-kernel")
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--synthetic", action="store_true", help="generate a ring-coupled toy dataset")
    p.add_argument("--n-nodes", type=int, default=8)
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared directory")
    p.add_argument("--prepared", required=True)
    p.add_argument("--config", help="JSON config file (RGSLConfig keys)")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prepared", required=True)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="forecast from the tail of an input series")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("export-graph", help="dump probs/sample/explicit adjacency as CSV or PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--what", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_graph)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergedLoss as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ConfigMismatch as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (RGSLError, FileNotFoundError, OSError, ValueError, KeyError) as exc:
        name = "FileNotFound" if isinstance(exc, FileNotFoundError) else type(exc).__name__
        print(f"{name}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
