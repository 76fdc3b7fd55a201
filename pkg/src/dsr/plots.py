"""Figure rendering for the analysis and training report paths.

Every figure is written next to its CSV so a run directory is
self-contained.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def plot_staircase(result, v_th, n_steps, alpha, path):
    i = result.column("i_star")
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.step(i, result.column("simulated"), where="post", label="simulated rate")
    ax.plot(i, result.column("clamp_ref"), "k--", lw=1, label="clamp reference")
    ax.set_xlabel("constant input current")
    ax.set_ylabel("scaled firing rate")
    ax.set_title(f"IF staircase (V_th={v_th:g}, N={n_steps}, alpha={alpha:g})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_convergence(result, path):
    n = result.column("n_steps")
    fig, ax = plt.subplots(figsize=(5, 4))
    for name in result.columns[1:]:
        ax.loglog(n, result.column(name), marker="o", label=name)
    ax.set_xlabel("time steps N")
    ax.set_ylabel("max |representation - surrogate|")
    ax.set_title("representation convergence")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_error_decomposition(result, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(result.column("i_star"), result.column("e_q"), ".", ms=3)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("constant input current")
    ax.set_ylabel("quantization error e_q")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training(rows, header, path):
    """Loss/accuracy curves from metrics CSV rows."""
    if not rows:
        return
    cols = {name: [r[i] for r in rows] for i, name in enumerate(header)}
    epochs = [float(e) for e in cols["epoch"]]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(epochs, [float(v) for v in cols["train_loss"]], label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, [float(v) for v in cols["train_acc"]], label="train acc")
    ax2.plot(epochs, [float(v) for v in cols["test_acc"]], label="test acc")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0, 1)
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
