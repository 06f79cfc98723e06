"""Figures for a finished scenario, rendered off-screen to PNG files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIG_DPI = 120


def _shade_attack(ax, config):
    if config.attacked_regions:
        ax.axvspan(config.attack_start, config.attack_end, color="0.9", zorder=0, label="attack window")


def plot_probability(result, comparison, path):
    """Ledger attack probability against the BG cross-trial box plots."""
    cfg = result.config
    epochs = np.arange(cfg.epochs)
    fig, ax = plt.subplots(figsize=(9, 4))
    _shade_attack(ax, cfg)
    if comparison.box is not None:
        box = comparison.box
        ax.fill_between(epochs, box["q1"], box["q3"], color="tab:orange", alpha=0.35, lw=0, label="BG interquartile")
        ax.vlines(epochs, box["whisker_lo"], box["whisker_hi"], color="tab:orange", lw=0.6, alpha=0.6)
        ax.plot(epochs, box["median"], color="tab:orange", lw=1.2, label="BG median")
        ax.plot(epochs, box["mean"], color="tab:orange", lw=0.8, ls=":", label="BG mean")
    ax.plot(epochs, result.p_attack_chain, color="tab:blue", lw=1.6, label="ledger")
    ax.axhline(comparison.threshold, color="k", lw=0.8, ls="--")
    ax.set_xlim(0, cfg.epochs - 1)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("epoch")
    ax.set_ylabel("global attack probability")
    ax.legend(loc="center left", fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return path


def plot_alarms(result, path):
    cfg = result.config
    fig, ax = plt.subplots(figsize=(9, 0.25 * cfg.n_regions + 1.2))
    raster = result.alarms.T.astype(float) + 0.4 * result.truth.T
    ax.imshow(raster, aspect="auto", interpolation="nearest", cmap="Greys", vmin=0, vmax=1.4,
              extent=(-0.5, cfg.epochs - 0.5, cfg.n_regions + 0.5, 0.5))
    ax.set_xlabel("epoch")
    ax.set_ylabel("region")
    ax.set_title("local alarms (grey band: attacked)", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return path


def plot_scenario(result, comparison, out_dir):
    return [
        plot_probability(result, comparison, out_dir / "probability.png"),
        plot_alarms(result, out_dir / "alarms.png"),
    ]
