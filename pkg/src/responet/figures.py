"""Matplotlib rendering of run artifacts to image files.

Every CSV the commands emit has a figure twin: training curves from the
history, a four-panel prediction sheet (spectrum, trajectories, input,
pointwise error) for the flagged best/worst samples, and a comparison
bar chart.  The Agg backend is forced so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .operatornets import amplitude_spectrum

_FIG_DPI = 130


def save_history_figure(history, path, title: str = "") -> None:
    """Relative L2 against epoch for the train and test curves."""
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    ax.semilogy(history.epoch, history.train_rel_l2, label="train", lw=1.2)
    ax.semilogy(history.epoch, history.test_rel_l2, label="test", lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("relative $L_2$ error")
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)


def save_prediction_figure(t, input_signal, truth, pred, dt, path, label: str = "") -> None:
    """Four panels: amplitude spectra, trajectories, input, pointwise error."""
    fig, axes = plt.subplots(2, 2, figsize=(9.5, 6.0))
    freqs, truth_amp = amplitude_spectrum(truth, dt)
    _, pred_amp = amplitude_spectrum(pred, dt)
    ax = axes[0, 0]
    ax.plot(freqs, truth_amp, label="true", lw=1.0)
    ax.plot(freqs, pred_amp, label="predicted", lw=1.0, ls="--")
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("amplitude")
    ax.legend(fontsize=8)

    ax = axes[0, 1]
    ax.plot(t, truth, label="true", lw=1.0)
    ax.plot(t, pred, label="predicted", lw=1.0, ls="--")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("response")
    ax.legend(fontsize=8)

    ax = axes[1, 0]
    ax.plot(t, input_signal, lw=0.8, color="tab:gray")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("input acceleration")

    ax = axes[1, 1]
    peak = np.abs(truth).max()
    ax.plot(t, np.abs(pred - truth) / peak, lw=0.8, color="tab:red")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("|error| / peak response")

    if label:
        fig.suptitle(label, fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)


def save_report_figures(report, directory, stem: str = "") -> list:
    """Render prediction sheets for the best and worst samples; returns paths."""
    import os

    t = np.arange(report.predictions.shape[1]) * report.dt
    written = []
    for tag, sample_id in (("best", report.best_id), ("worst", report.worst_id)):
        path = os.path.join(directory, f"{stem}{tag}_{sample_id}.png")
        save_prediction_figure(
            t,
            report.inputs[sample_id],
            report.truths[sample_id],
            report.predictions[sample_id],
            report.dt,
            path,
            label=f"{tag} sample {sample_id}: rel L2 "
            f"{report.rel_l2[sample_id]:.4g}, rel err {report.rel_err[sample_id]:.4g}",
        )
        written.append(path)
    return written


def save_compare_figure(rows, path) -> None:
    """Bar chart of final test errors, one bar per comparison row."""
    labels = [r["label"] for r in rows]
    train = [r["train_rel_l2"] for r in rows]
    test = [r["test_rel_l2"] for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(6.0, 1.4 * len(rows)), 4.0))
    ax.bar(x - 0.2, train, width=0.4, label="train")
    ax.bar(x + 0.2, test, width=0.4, label="test")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=25, ha="right", fontsize=8)
    ax.set_yscale("log")
    ax.set_ylabel("relative $L_2$ error")
    ax.grid(alpha=0.3, axis="y")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)
