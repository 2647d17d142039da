"""Report figures. Everything renders off-screen to PNG files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

# no timestamps or version strings, so reruns produce identical bytes
_PNG_META = {"Software": None}

# left, down, right, up, none
ACTION_COLORS = ListedColormap(["#d62728", "#2ca02c", "#1f77b4", "#ff7f0e", "#ffffff"])

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "figure.dpi": 100,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def training_curves(rows: Sequence[dict], path: str | Path) -> Path:
    updates = [r["update"] for r in rows]
    panels = [
        ("mean_reward", "mean intrinsic reward"),
        ("median_decode_steps", "median decode steps"),
        ("inverse_loss", "inverse loss (nats)"),
        ("empowerment_nats", "empowerment estimate (nats)"),
        ("policy_loss", "policy loss"),
        ("entropy", "policy entropy (nats)"),
    ]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 3, figsize=(9, 5), constrained_layout=True)
        for ax, (key, label) in zip(axes.flat, panels):
            ax.plot(updates, [r[key] for r in rows], lw=1.0, color="k")
            ax.set_title(label)
            ax.set_xlabel("update")
        return _save(fig, path)


def interval_histogram(intervals: np.ndarray, n_bits: int, path: str | Path,
                       baseline: np.ndarray | None = None) -> Path:
    """Decode-interval histogram against the uniform-guessing geometric law."""
    intervals = np.asarray(intervals)
    p = 2.0**-n_bits
    top = int(max(intervals.max() if intervals.size else 1, 4 / p if n_bits <= 6 else 3 / p))
    ks = np.arange(1, top + 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2), constrained_layout=True)
        bins = np.arange(0.5, top + 1.5, max(1, top // 60))
        if intervals.size:
            ax.hist(intervals, bins=bins, density=True, color="0.6", label="agent")
        if baseline is not None and len(baseline):
            ax.hist(baseline, bins=bins, density=True, histtype="step", color="C0", label="random guesser")
        ax.plot(ks, p * (1 - p) ** (ks - 1), color="C3", lw=1.0, label="geometric, p = 2^-b")
        if intervals.size:
            ax.axvline(np.median(intervals), color="k", ls="--", lw=0.8, label="median")
        ax.set_xlabel("steps to decode")
        ax.set_ylabel("frequency")
        ax.legend()
        return _save(fig, path)


def empowerment_curve(curve: np.ndarray, entropy: float, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3), constrained_layout=True)
        ax.plot(np.arange(1, len(curve) + 1), curve, color="k", lw=1.0, label="estimate")
        ax.axhline(entropy, color="C3", ls="--", lw=0.8, label="H(options)")
        ax.axhline(0.0, color="0.5", lw=0.5)
        ax.set_xlabel("step")
        ax.set_ylabel("nats")
        ax.legend()
        return _save(fig, path)


def episode_panels(trace: dict, path: str | Path, max_steps: int = 16) -> Path:
    """Observation, action and decoder rows for the first steps of an episode."""
    n = min(len(trace["obs"]), max_steps)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, max(n, 1), figsize=(1.1 * max(n, 1), 3.6), squeeze=False,
                                 constrained_layout=True)
        for t in range(n):
            top, mid, bot = axes[0, t], axes[1, t], axes[2, t]
            top.imshow(trace["obs"][t], cmap="gray_r", vmin=0, vmax=1)
            mid.imshow(trace["actions"][t], cmap=ACTION_COLORS, vmin=-0.5, vmax=4.5)
            probs = trace["bit_probs"][t]
            target = trace["targets"][t]
            bot.bar(np.arange(len(probs)), probs, color=["C0" if b else "C1" for b in target])
            bot.set_ylim(0, 1)
            bot.set_xticks([])
            bot.set_title(f"p={trace['p_target'][t]:.2f}" + (" *" if trace["rewards"][t] else ""), fontsize=7)
            top.set_title(f"t={t}", fontsize=7)
            for ax in (top, mid):
                ax.set_xticks([])
                ax.set_yticks([])
            if t:
                bot.set_yticks([])
        return _save(fig, path)
