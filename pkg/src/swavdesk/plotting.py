"""Figures for the report path; everything renders off-screen to PNG."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "lines.linewidth": 1.4,
}


def training_curves(history: list, path) -> None:
    """Loss and code entropy per epoch, with the learning rate on a twin axis."""
    epochs = [m["epoch"] for m in history]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_ent) = plt.subplots(1, 2)
        ax_loss.plot(epochs, [m["loss"] for m in history], color="C0", label="loss")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("loss")
        ax_lr = ax_loss.twinx()
        ax_lr.plot(epochs, [m["lr"] for m in history], color="C1", ls="--", label="lr")
        ax_lr.set_ylabel("lr")
        ax_lr.grid(False)
        ent = [m.get("code_mean_entropy") for m in history]
        if any(e is not None for e in ent):
            ax_ent.plot(epochs, [float("nan") if e is None else e for e in ent], color="C2")
        ax_ent.set_xlabel("epoch")
        ax_ent.set_ylabel("batch-mean code entropy")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def ablation_bars(rows: list, path, baseline: float | None = None, title: str = "") -> None:
    """One bar per variant (median k-NN accuracy); collapsed variants are hatched."""
    names = [r["variant"] for r in rows]
    accs = [r["knn_acc"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        bars = ax.bar(range(len(rows)), accs, color="C0")
        for bar, r in zip(bars, rows):
            if r["collapse"]:
                bar.set_hatch("//")
                bar.set_facecolor("C3")
        if baseline is not None:
            ax.axhline(baseline, color="k", ls=":", label="raw features")
            ax.legend(loc="lower right")
        ax.set_xticks(range(len(rows)), names, rotation=30, ha="right")
        ax.set_ylabel("20-NN accuracy")
        lo = min(accs + ([baseline] if baseline is not None else []))
        ax.set_ylim(max(0.0, lo - 0.05), 1.0)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
