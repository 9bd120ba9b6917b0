"""Report figures written next to the CSV/text outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import roc_curve  # noqa: E402
from .taxonomy import DefectClass  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
    # fixed metadata keeps reruns byte-identical
    "svg.hashsalt": "pvscreen",
}


def _save(fig, path):
    metadata = {"Software": None} if str(path).endswith(".png") else None
    fig.savefig(path, metadata=metadata)
    plt.close(fig)


def plot_training_log(log, path):
    epochs = [e.epoch for e in log]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(epochs, [e.loss for e in log], color="tab:blue", label="loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        ax2 = ax.twinx()
        ax2.plot(epochs, [e.accuracy for e in log], color="tab:orange", label="accuracy")
        ax2.set_ylabel("training accuracy")
        ax2.set_ylim(0, 1.02)
        fig.legend(loc="upper center", ncol=2, frameon=False)
        _save(fig, path)


def plot_confusion(confusion, path):
    cm = np.asarray(confusion)
    names = [c.slug.replace("_", "\n") for c in DefectClass]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 5.2))
        im = ax.imshow(cm, cmap="Blues")
        ax.set_xticks(range(len(names)), names, rotation=90)
        ax.set_yticks(range(len(names)), names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        cut = cm.max() / 2.0 if cm.size else 0
        for (i, j), v in np.ndenumerate(cm):
            ax.text(j, i, str(v), ha="center", va="center", color="white" if v > cut else "black", fontsize=7)
        fig.colorbar(im, ax=ax, fraction=0.046)
        _save(fig, path)


def plot_roc(true_labels, probabilities, aucs, path):
    y = np.asarray(true_labels)
    probs = np.asarray(probabilities)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
        for c in DefectClass:
            if aucs[c] is None:
                continue
            fpr, tpr = roc_curve(probs[:, c], y == c)
            ax.plot(fpr, tpr, lw=1.2, label=f"{c.slug} ({aucs[c]:.2f})")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.legend(loc="lower right")
        _save(fig, path)
