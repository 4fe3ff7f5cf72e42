"""Static plots of similarity curves."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .similarity import SimilarityCurve  # noqa: E402


def plot_curve(curve: SimilarityCurve, path, K: int, title: str = "",
               edit_mask: Optional[np.ndarray] = None) -> Path:
    """Normalized similarity against frame index, with class bands shaded."""
    fig, ax = plt.subplots(figsize=(7, 3))
    frames = np.arange(curve.F)
    for k in range(K):
        ax.axhspan(k / K, (k + 1) / K, color=plt.cm.RdYlGn(k / max(K - 1, 1)), alpha=0.15, lw=0)
    if edit_mask is not None and np.any(edit_mask):
        idx = np.flatnonzero(edit_mask)
        ax.axvspan(idx[0] - 0.5, idx[-1] + 0.5, color="grey", alpha=0.2, label="edit window")
    ax.plot(frames, curve.normalized, "k.-", label="normalized similarity")
    ax.set_xlim(-0.5, curve.F - 0.5)
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel("source frame")
    ax.set_ylabel("similarity")
    snr = "inf" if np.isinf(curve.snr) else f"{curve.snr:.2f}"
    ax.set_title(f"{title}  (MotionSNR={snr})".strip())
    ax.legend(loc="lower right", fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=80)
    plt.close(fig)
    return path
