"""Report figures (matplotlib, file output only) and contour overlays."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import cup_region, disc_region  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_curve(history: Sequence[tuple[str, int, float]], path, smooth: int = 25) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        offset = 0
        for stage in dict.fromkeys(s for s, _, _ in history):
            losses = np.array([l for s, _, l in history if s == stage])
            steps = offset + np.arange(losses.size)
            line, = ax.plot(steps, losses, alpha=0.25, lw=0.8)
            if losses.size >= smooth:
                kern = np.ones(smooth) / smooth
                ax.plot(steps[smooth - 1:], np.convolve(losses, kern, mode="valid"),
                        color=line.get_color(), lw=1.5, label=stage)
            else:
                line.set_label(stage)
            offset += losses.size
        ax.set_xlabel("iteration")
        ax.set_ylabel("cross-entropy")
        ax.set_yscale("log")
        ax.legend()
        return _save(fig, path)


def plot_metrics(report, path) -> Path:
    """Per-image overlap errors and CDR scatter."""
    with plt.rc_context(STYLE):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.6))
        keys = ["E_disc", "E_cup", "E_rim"]
        ax0.boxplot([report.column(k) for k in keys])
        ax0.set_xticks(range(1, len(keys) + 1), keys)
        ax0.set_ylabel("overlap error")
        gt, pred = report.column("CDR_gt"), report.column("CDR_pred")
        ax1.scatter(gt, pred, s=10)
        lo = float(min(gt.min(), pred.min(), 0.2))
        ax1.plot([lo, 1], [lo, 1], "k--", lw=0.8)
        ax1.set_xlabel("reference CDR")
        ax1.set_ylabel("predicted CDR")
        ax1.set_title(f"mean |error| = {report.summary['CDR_err']:.4f}")
        return _save(fig, path)


def plot_equivariance(reports, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        props = sorted({r.prop for r in reports})
        for i, prop in enumerate(props):
            errs = np.array([max(r.max_error, 1e-18) for r in reports if r.prop == prop])
            ax.scatter(np.full(errs.size, i) + np.linspace(-0.2, 0.2, errs.size), errs, s=8)
            tol = next(r.tolerance for r in reports if r.prop == prop)
            ax.hlines(tol, i - 0.35, i + 0.35, colors="r", linestyles="--")
        ax.set_xticks(range(len(props)), props)
        ax.set_yscale("log")
        ax.set_ylabel("max interior error")
        return _save(fig, path)


def _contour(region: np.ndarray) -> np.ndarray:
    region = np.asarray(region, dtype=bool)
    pad = np.pad(region, 1)
    inner = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    return region & ~inner


def overlay_contours(image: np.ndarray, pred: np.ndarray, gt: np.ndarray | None = None,
                     dashed: bool = True) -> np.ndarray:
    """[3,H,W] image with reference contours in red and predicted ones in green
    (dashed by dropping alternate contour pixels)."""
    out = np.array(image, dtype=np.float64, copy=True)
    h, w = out.shape[1:]
    dash = ((np.arange(h)[:, None] + np.arange(w)[None, :]) // 2) % 2 == 0 if dashed \
        else np.ones((h, w), dtype=bool)
    layers = []
    if gt is not None:
        layers.append((gt, (1.0, 0.0, 0.0), np.ones((h, w), dtype=bool)))
    layers.append((pred, (0.0, 1.0, 0.0), dash))
    for mask, color, keep in layers:
        edge = (_contour(disc_region(mask)) | _contour(cup_region(mask))) & keep
        for c in range(3):
            out[c][edge] = color[c]
    return out
