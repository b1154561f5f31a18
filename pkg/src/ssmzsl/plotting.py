"""Report figures written next to the CSV/JSONL outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "savefig.dpi": 150,
}
GOLDEN = (5 ** 0.5 - 1) / 2


def _figure(width=4.5):
    return plt.subplots(figsize=(width, width * GOLDEN))


def plot_sweep(rows, path, title=None):
    """S, U and H against the calibration coefficient; marks the best H."""
    lam = [r[0] for r in rows]
    with plt.rc_context(RC):
        fig, ax = _figure()
        for col, label, style in ((1, "S", "s-"), (2, "U", "o-"), (3, "H", "^-")):
            ax.plot(lam, [r[col] for r in rows], style, ms=3, label=label)
        best = max(rows, key=lambda r: r[3])
        ax.axvline(best[0], color="0.6", lw=0.8, ls="--")
        ax.set_xlabel(r"$\lambda_{col}$")
        ax.set_ylabel("accuracy (%)")
        ax.set_ylim(0, 100)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, ncol=3, loc="lower center")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_losses(history, path):
    epochs = [r.epoch + 1 for r in history]
    with plt.rc_context(RC):
        fig, ax = _figure()
        ax.plot(epochs, [r.ce for r in history], label="cross-entropy")
        ax.plot(epochs, [r.sc for r in history], label="attribute L1")
        ax.plot(epochs, [r.total for r in history], "k--", lw=1, label="total")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
