"""Report figures (PNG, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import POOLED, ErrorRow  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def error_rate_figure(rows: Sequence[ErrorRow], path) -> Path:
    """Grouped bars: one group per metric, one bar per (model, language), pooled rows excluded."""
    rows = [r for r in rows if r.language != POOLED or len({x.language for x in rows}) == 1]
    metrics = list(dict.fromkeys(r.metric for r in rows))
    series = list(dict.fromkeys((r.model, r.language) for r in rows))
    vals = {(r.metric, r.model, r.language): r.rate for r in rows}
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(metrics) + 2), 3.5))
    width = 0.8 / max(len(series), 1)
    x = np.arange(len(metrics))
    for i, (model, lang) in enumerate(series):
        h = [vals.get((m, model, lang)) for m in metrics]
        ax.bar(x + i * width - 0.4 + width / 2, [np.nan if v is None else v for v in h], width,
               label=f"{model} {lang}")
    ax.set_xticks(x, metrics)
    ax.set_ylabel("error rate (%)")
    ax.set_ylim(bottom=0)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def training_curve_figure(curves: Mapping[str, Sequence[Mapping]], path) -> Path:
    """Train/dev loss per epoch; ``curves[name]`` is a list of epoch records."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    offset = 0
    for name, hist in curves.items():
        if not hist:
            continue
        ep = [offset + h["epoch"] for h in hist]
        ax.plot(ep, [h["train_loss"] for h in hist], label=f"{name} train")
        ax.plot(ep, [h["dev_loss"] for h in hist], "--", label=f"{name} dev")
        offset = ep[-1]
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss per utterance")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path
