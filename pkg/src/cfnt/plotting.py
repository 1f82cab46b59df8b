"""Report figures, rendered off-screen to image files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import EvalReport  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}


def report_figure(rep: EvalReport, path, title=None) -> None:
    """Two panels: entity precision / recall / F1, and word error breakdown."""
    with plt.rc_context(STYLE):
        fig, (ax_e, ax_w) = plt.subplots(1, 2, figsize=(7.0, 3.0))
        vals = [rep.entity_precision, rep.entity_recall, rep.entity_f1]
        bars = ax_e.bar(["precision", "recall", "F1"], vals, color=["#4c72b0", "#55a868", "#c44e52"])
        ax_e.bar_label(bars, fmt="%.3f", fontsize=8)
        ax_e.set_ylim(0, 1.1)
        ax_e.set_title(f"entities ({rep.ref_entities} ref, {rep.hyp_entities} hyp)")

        counts = [rep.substitutions, rep.deletions, rep.insertions]
        bars = ax_w.bar(["sub", "del", "ins"], counts, color="#8172b2")
        ax_w.bar_label(bars, fontsize=8)
        ax_w.set_ylim(0, max(1, max(counts)) * 1.2)
        ax_w.set_title(f"word errors (WER {rep.wer:.3f}, {rep.ref_words} words)")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path, format="png", metadata={"Software": None})
        plt.close(fig)
