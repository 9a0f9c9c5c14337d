"""Matplotlib figures written next to the delimited reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def save_loss_curve(path, log, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5), constrained_layout=True)
    losses = log.losses()
    ax.plot(np.arange(len(losses)), losses, lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_bench_figure(path, report: dict) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.8), constrained_layout=True)
    scaling = report["scaling"]
    ns = [r["n_tokens"] for r in scaling["rows"]]
    axes[0].loglog(ns, [r["agent_macs"] for r in scaling["rows"]], "o-",
                   label=f"agent (slope {scaling['agent_exponent']:.2f})")
    axes[0].loglog(ns, [r["full_macs"] for r in scaling["rows"]], "s-",
                   label=f"full (slope {scaling['full_exponent']:.2f})")
    axes[0].set_xlabel("spatial tokens N")
    axes[0].set_ylabel("multiply-accumulates")
    axes[0].set_title("attention cost scaling")
    axes[0].legend()
    axes[0].grid(True, alpha=0.3, which="both")

    rows = report["table"]
    n_max = max(r.n_tokens for r in rows)
    sel = [r for r in rows if r.n_tokens == n_max]
    axes[1].plot([100 * r.ratio for r in sel], [1.0 / r.agent_seconds for r in sel], "o-")
    axes[1].set_xlabel("agent ratio (%)")
    axes[1].set_ylabel("fused steps / s")
    axes[1].set_title(f"throughput at N={n_max}")
    axes[1].grid(True, alpha=0.3)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_metrics_figure(path, report: dict, aperture=None, audio=None) -> None:
    n_panels = 2 if aperture is None else 3
    fig, axes = plt.subplots(1, n_panels, figsize=(4.2 * n_panels, 3.4),
                             constrained_layout=True)
    rows = report["rows"]
    frames = [r["frame"] for r in rows]
    cap = [min(r["psnr"], 80.0) for r in rows]
    axes[0].plot(frames, cap, lw=0.9)
    axes[0].set_xlabel("frame")
    axes[0].set_ylabel("PSNR (dB)")
    axes[0].grid(True, alpha=0.3)
    axes[1].plot(frames, [r["ssim"] for r in rows], lw=0.9, color="tab:orange")
    axes[1].set_xlabel("frame")
    axes[1].set_ylabel("SSIM")
    axes[1].grid(True, alpha=0.3)
    if aperture is not None:
        axes[2].scatter(audio, aperture, s=8)
        axes[2].set_xlabel("audio channel 0")
        axes[2].set_ylabel("rendered aperture (px)")
        axes[2].grid(True, alpha=0.3)
    fig.savefig(path, dpi=150)
    plt.close(fig)
