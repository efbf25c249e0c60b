"""Report figures rendered to PNG files (headless backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_spectrogram(values: np.ndarray, path, frame_ms: float = 10.0, title: str = "log-mel spectrogram") -> None:
    v = np.asarray(values)
    fig, ax = plt.subplots(figsize=(8, 3))
    im = ax.imshow(v, origin="lower", aspect="auto", interpolation="nearest",
                   extent=(0, v.shape[1] * frame_ms / 1000.0, 0, v.shape[0]))
    ax.set_xlabel("time (s)")
    ax.set_ylabel("mel channel")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="counts")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_confusion(confusion: np.ndarray, class_names, path, title: str = "confusion matrix") -> None:
    cm = np.asarray(confusion)
    n = len(cm)
    size = max(4.0, 0.25 * n + 2)
    fig, ax = plt.subplots(figsize=(size, size))
    ax.imshow(cm, cmap="Blues")
    ticks = np.arange(n)
    ax.set_xticks(ticks, class_names, rotation=90 if n > 8 else 0)
    ax.set_yticks(ticks, class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("reference")
    ax.set_title(title)
    if n <= 12:
        thresh = cm.max() / 2 if cm.size else 0
        for i in range(n):
            for j in range(n):
                ax.text(j, i, str(cm[i, j]), ha="center", va="center",
                        color="white" if cm[i, j] > thresh else "black")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_stream(events, class_names, path, title: str = "per-window class probabilities") -> None:
    """Stacked probabilities per emitted window (keyword models: averaged over seconds)."""
    fig, ax = plt.subplots(figsize=(8, 3))
    if events:
        probs = np.stack([np.asarray(e.probs).reshape(-1, np.shape(e.probs)[-1]).mean(axis=0) for e in events])
        starts = np.array([e.start_s for e in events])
        width = events[0].end_s - events[0].start_s
        bottom = np.zeros(len(events))
        for k in range(probs.shape[1]):
            name = class_names[k] if k < len(class_names) else str(k)
            ax.bar(starts, probs[:, k], width=width, bottom=bottom, align="edge",
                   label=name if probs.shape[1] <= 10 else None)
            bottom += probs[:, k]
        if probs.shape[1] <= 10:
            ax.legend(loc="upper right", fontsize="small")
    ax.set_ylim(0, 1)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("probability")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
