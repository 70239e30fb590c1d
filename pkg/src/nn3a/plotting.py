"""Figures written next to JSON reports. Uses the non-interactive Agg backend."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}


def figure_path(report_path, suffix: str = ".png") -> Path:
    p = Path(report_path)
    return p.with_suffix(suffix)


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss_curve(curves: dict, path, window: int = 20):
    """``curves`` maps a label to a per-step loss list."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        for label, values in curves.items():
            values = np.asarray(values, dtype=float)
            smoothed = len(values) >= window
            ax.plot(values, alpha=0.3 if smoothed else 1.0, lw=0.8,
                    label=None if smoothed else label)
            if smoothed:
                smooth = np.convolve(values, np.ones(window) / window, mode="valid")
                ax.plot(np.arange(window - 1, len(values)), smooth, lw=1.4, label=label,
                        color=ax.lines[-1].get_color())
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_ablation(report: dict, path):
    rows = report["rows"]
    cols = report["columns"]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(cols), figsize=(3 * len(cols), 3), squeeze=False)
        names = [r["config"] for r in rows]
        for ax, col in zip(axes[0], cols):
            vals = [np.nan if r[col] is None else r[col] for r in rows]
            ax.bar(np.arange(len(rows)), vals, color="0.45")
            ax.set_xticks(np.arange(len(rows)))
            ax.set_xticklabels(names, rotation=30, ha="right")
            ax.set_title(col)
            ax.set_ylabel("dB")
        fig.tight_layout()
        return _save(fig, path)


def plot_eval(report: dict, path):
    utts = report["utterances"]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7, 3))
        erles = [u["erle_db"] for u in utts if u["erle_db"] is not None]
        axes[0].hist(erles, bins=20, color="0.45")
        axes[0].set_xlabel("FE ST ERLE (dB)")
        pairs = [(u["si_sdr_in_db"], u["si_sdr_db"]) for u in utts if u["si_sdr_db"] is not None]
        if pairs:
            a = np.array(pairs)
            axes[1].scatter(a[:, 0], a[:, 1], s=8, c="0.2")
            lo, hi = float(a.min()), float(a.max())
            axes[1].plot([lo, hi], [lo, hi], "k--", lw=0.8)
        axes[1].set_xlabel("SI-SDR in (dB)")
        axes[1].set_ylabel("SI-SDR out (dB)")
        fig.tight_layout()
        return _save(fig, path)


def plot_enhance(mic, enhanced, vad, path, sample_rate: int = 16000, hop: int = 160):
    """Waveforms with the VAD trace, for a quick look at one processed file."""
    mic = np.asarray(mic)
    enhanced = np.asarray(enhanced)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 1, figsize=(7, 3.5), sharex=True)
        t = np.arange(len(mic)) / sample_rate
        axes[0].plot(t, mic, lw=0.4, color="0.5", label="mic")
        axes[0].plot(t[:len(enhanced)], enhanced, lw=0.4, color="k", label="enhanced")
        axes[0].legend(frameon=False, loc="upper right")
        tv = np.arange(len(vad)) * hop / sample_rate
        axes[1].plot(tv, vad, color="k", lw=0.8)
        axes[1].set_ylim(-0.05, 1.05)
        axes[1].set_ylabel("P(speech)")
        axes[1].set_xlabel("time (s)")
        fig.tight_layout()
        return _save(fig, path)
