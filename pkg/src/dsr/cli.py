"""Command-line entry point: train / eval / analyze.

Every run directory receives the resolved config, delimited output (CSV),
and rendered figures, so a run is reproducible and self-contained.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import plots
from .analysis import (
    QuantSpec,
    quantize_weights,
    staircase_grid,
    sweep_convergence,
    sweep_error_decomposition,
    sweep_staircase,
    two_layer_if_spec,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, dump_config, load_config, load_datasets
from .data import FormatError, augment, batches, encode_static, normalize
from .engine import Trainer, TrainingDiverged
from .layers import build_network
from .tensor import ParameterError


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _set_threads(n: int | None):
    if n is None:
        env = os.environ.get("DSR_THREADS")
        n = int(env) if env else None
    if n is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _prepare_batch(samples, section, rng, training):
    x = samples
    if training and (section.get("crop_pad", 0) or section.get("hflip_prob", 0.0)):
        x = np.stack([
            augment(s, section.get("crop_pad", 0), section.get("hflip_prob", 0.0), rng)
            for s in samples
        ])
    if "normalize_mean" in section:
        x = normalize(x, section["normalize_mean"], section["normalize_std"])
    return x


def run_train(cfg: RunConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(dump_config(cfg))

    tc = cfg.resolved_train
    train_ds, test_ds = load_datasets(cfg.dataset)
    net = build_network(cfg.resolved_network, seed=tc.seed, dtype=cfg.dtype)
    trainer = Trainer(net, tc)
    data_rng = np.random.default_rng(tc.seed + 1)

    spiking = net.spiking_layers()
    header = (
        ["epoch", "lr", "train_loss", "train_acc", "test_acc"]
        + [f"v_th_{i}" for i in range(len(spiking))]
        + [f"firing_rate_{i}" for i in range(len(spiking))]
    )
    rows: list[list[str]] = []
    metrics_path = out_dir / "metrics.csv"

    def eval_batches():
        for samples, labels in batches(test_ds, tc.batch_size, shuffle=False):
            x = _prepare_batch(samples, cfg.dataset, data_rng, training=False)
            yield encode_static(x, tc.n_steps), labels

    for epoch in range(tc.epochs):
        trainer.set_epoch(epoch)
        losses, accs = [], []
        for samples, labels in batches(train_ds, tc.batch_size, data_rng):
            x = _prepare_batch(samples, cfg.dataset, data_rng, training=True)
            frames = encode_static(x.astype(cfg.dtype), tc.n_steps)
            stats = trainer.train_step(frames, labels)
            losses.append(stats["loss"])
            accs.append(stats["acc"])
        trainer.recalibrate_bn(
            (encode_static(_prepare_batch(s, cfg.dataset, data_rng, False), tc.n_steps), l)
            for s, l in batches(train_ds, tc.batch_size, np.random.default_rng(tc.seed + 2))
        )
        test_acc, firing = trainer.evaluate(eval_batches())
        row = (
            [epoch, trainer.lr, float(np.mean(losses)), float(np.mean(accs)), test_acc]
            + [float(l.threshold.data) for l in spiking]
            + firing
        )
        rows.append([_fmt(v) for v in row])
        with open(metrics_path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        if cfg.save_interval and (epoch + 1) % cfg.save_interval == 0:
            save_checkpoint(out_dir / f"checkpoint_epoch{epoch + 1}.dsr", net)

    if tc.epochs == 0 and not metrics_path.exists():
        with open(metrics_path, "w", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(header)
    save_checkpoint(out_dir / "checkpoint.dsr", net)
    plots.plot_training(rows, header, out_dir / "training.png")
    return 0


def run_eval(cfg: RunConfig, checkpoint: Path, quant_bits: int | None) -> int:
    _, test_ds = load_datasets(cfg.dataset)
    tc = cfg.resolved_train
    net = build_network(cfg.resolved_network, seed=tc.seed, dtype=cfg.dtype)
    load_checkpoint(checkpoint, net)
    if quant_bits is not None:
        quantize_weights(net, QuantSpec(bits=quant_bits))
    trainer = Trainer(net, tc)

    def eval_batches():
        rng = np.random.default_rng(0)
        for samples, labels in batches(test_ds, tc.batch_size, shuffle=False):
            x = _prepare_batch(samples, cfg.dataset, rng, training=False)
            yield encode_static(x.astype(cfg.dtype), tc.n_steps), labels

    acc, firing = trainer.evaluate(eval_batches())
    print(f"test_accuracy {acc:.6f}")
    for i, r in enumerate(firing):
        print(f"firing_rate_{i} {r:.6f}")
    return 0


def run_analyze(args, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.analysis == "staircase":
        grid = staircase_grid(args.v_th, args.n, args.points)
        if grid.size == 0:
            raise ParameterError("empty current grid")
        result = sweep_staircase(args.v_th, args.n, args.alpha, grid)
        result.write_csv(out_dir / "staircase.csv")
        plots.plot_staircase(result, args.v_th, args.n, args.alpha,
                             out_dir / "staircase.png")
    elif args.analysis == "convergence":
        n_list = [int(v) for v in args.n_list.split(",") if v]
        if not n_list:
            raise ParameterError("empty N list")
        spec = two_layer_if_spec()
        result = sweep_convergence(spec, n_list, seed=args.seed)
        result.write_csv(out_dir / "convergence.csv")
        plots.plot_convergence(result, out_dir / "convergence.png")
    elif args.analysis == "error-decomposition":
        grid = staircase_grid(args.v_th, args.n, args.points)
        result = sweep_error_decomposition(args.v_th, args.n, args.alpha, grid)
        result.write_csv(out_dir / "error_decomposition.csv")
        plots.plot_error_decomposition(result, out_dir / "error_decomposition.png")
    else:
        raise ParameterError(f"unknown analysis {args.analysis!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", type=Path, default=Path("runs/latest"))
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--threads", type=int, default=None)

    p_train = sub.add_parser("train", help="train a network from a config file")
    p_train.add_argument("--config", type=Path, required=True)
    common(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--config", type=Path, required=True)
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--quant-bits", type=int, choices=(4, 8), default=None)
    common(p_eval)

    p_an = sub.add_parser("analyze", help="run analysis sweeps")
    p_an.add_argument("analysis",
                      choices=("staircase", "convergence", "error-decomposition"))
    p_an.add_argument("--v-th", type=float, default=1.0)
    p_an.add_argument("--n", type=int, default=5)
    p_an.add_argument("--alpha", type=float, default=1.0)
    p_an.add_argument("--points", type=int, default=200)
    p_an.add_argument("--n-list", type=str, default="16,64,256,1024")
    common(p_an)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    try:
        if args.command == "analyze":
            if args.seed is None:
                args.seed = 0
            return run_analyze(args, args.out)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.resolved_train.seed = args.seed
        if args.deterministic:
            cfg.resolved_train.deterministic = True
        if args.command == "train":
            return run_train(cfg, args.out)
        return run_eval(cfg, args.checkpoint, args.quant_bits)
    except (ConfigError, FormatError, ParameterError, TrainingDiverged,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
