"""Overlap error, boundary location error and vertical cup-to-disc ratio."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import cup_region, disc_region, region_centroid
from .errors import ContractError, DataError

RAY_STEP = 0.25
BLE_DIRECTIONS = 24


def target_region(mask: np.ndarray, target: str) -> np.ndarray:
    mask = np.asarray(mask)
    if target == "disc":
        return disc_region(mask)
    if target == "cup":
        return cup_region(mask)
    if target == "rim":
        return mask == 1
    raise ContractError(f"unknown target {target!r}")


def overlap_error(pred: np.ndarray, gt: np.ndarray, target: str) -> float:
    """1 - |P & G| / |P | G| for one target region; 0 when both are empty."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise DataError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p = target_region(pred, target)
    g = target_region(gt, target)
    union = np.count_nonzero(p | g)
    if union == 0:
        return 0.0
    return 1.0 - np.count_nonzero(p & g) / union


@dataclass
class BoundaryProfile:
    centroid: tuple[float, float]
    directions: np.ndarray
    radii: np.ndarray


def directions(n: int) -> np.ndarray:
    if n < 1:
        raise ContractError("need at least one direction")
    return 2 * np.pi * np.arange(n) / n


def boundary_profile(region: np.ndarray, centroid: tuple[float, float],
                     n: int = BLE_DIRECTIONS, step: float = RAY_STEP) -> BoundaryProfile:
    """Farthest foreground sample along rays cast from ``centroid``.

    Centroid and samples are in pixel-index coordinates; a sample belongs to
    the pixel it rounds to.  Rays stop at the image border.
    """
    region = np.asarray(region, dtype=bool)
    h, w = region.shape
    cy, cx = centroid
    if not (-0.5 <= cy < h - 0.5 and -0.5 <= cx < w - 0.5):
        raise DataError(f"centroid {centroid} outside {h}x{w} image")
    alphas = directions(n)
    t = np.arange(0.0, np.hypot(h, w) + step, step)
    ys = cy + t[None, :] * np.sin(alphas)[:, None]
    xs = cx + t[None, :] * np.cos(alphas)[:, None]
    ri = np.floor(ys + 0.5).astype(np.int64)
    ci = np.floor(xs + 0.5).astype(np.int64)
    inside = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
    # once a ray leaves the image it is done
    inside = np.cumprod(inside, axis=1).astype(bool)
    hit = np.zeros_like(inside)
    hit[inside] = region[ri[inside], ci[inside]]
    radii = np.where(hit.any(axis=1),
                     np.where(hit, t[None, :], 0.0).max(axis=1), 0.0)
    return BoundaryProfile((cy, cx), alphas, radii)


def ble(pred_region: np.ndarray, gt_region: np.ndarray,
        n: int = BLE_DIRECTIONS) -> tuple[float, np.ndarray]:
    """Mean absolute radial gap between two boundaries seen from the GT centroid."""
    gt_region = np.asarray(gt_region, dtype=bool)
    if not gt_region.any():
        raise DataError("ground-truth region is empty")
    c = region_centroid(gt_region)
    d_pred = boundary_profile(pred_region, c, n).radii
    d_gt = boundary_profile(gt_region, c, n).radii
    per_dir = np.abs(d_pred - d_gt)
    return float(per_dir.mean()), per_dir


def vertical_diameter(region: np.ndarray) -> int:
    rows = np.flatnonzero(np.asarray(region).any(axis=1))
    return 0 if rows.size == 0 else int(rows[-1] - rows[0] + 1)


def vertical_cdr(mask: np.ndarray) -> float:
    disc = vertical_diameter(disc_region(mask))
    if disc == 0:
        raise DataError("disc region is empty")
    return vertical_diameter(cup_region(mask)) / disc


COLUMNS = ("E_disc", "E_cup", "E_rim", "BLE_disc", "BLE_cup", "CDR_pred", "CDR_gt",
           "CDR_err")


@dataclass
class MetricsReport:
    names: list[str]
    rows: list[dict[str, float]]
    summary: dict[str, float] = field(default_factory=dict)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("image",) + COLUMNS)
        for name, row in zip(self.names, self.rows):
            writer.writerow([name] + [f"{row[k]:.6f}" for k in COLUMNS])
        writer.writerow(["mean"] + [f"{self.summary[k]:.6f}" for k in COLUMNS])
        writer.writerow(["std"] + [f"{self.summary[k + '_std']:.6f}" for k in COLUMNS])
        return buf.getvalue()

    def describe(self) -> str:
        s = self.summary
        return (f"images={len(self.rows)}  E_disc={s['E_disc']:.4f}  E_cup={s['E_cup']:.4f}  "
                f"E_rim={s['E_rim']:.4f}  BLE_disc={s['BLE_disc']:.2f}/{s['BLE_disc_std']:.2f}  "
                f"BLE_cup={s['BLE_cup']:.2f}/{s['BLE_cup_std']:.2f}  CDR_err={s['CDR_err']:.4f}")


def summarize(rows: Sequence[dict[str, float]]) -> dict[str, float]:
    """Mean and population std of every column."""
    summary = {}
    for key in COLUMNS:
        vals = np.array([r[key] for r in rows])
        summary[key] = float(vals.mean())
        summary[key + "_std"] = float(vals.std())
    return summary


def _safe_cdr(mask: np.ndarray) -> float:
    # a prediction without any disc counts as CDR 0
    try:
        return vertical_cdr(mask)
    except DataError:
        return 0.0


def evaluate(pred_masks: Sequence[np.ndarray], gt_masks: Sequence[np.ndarray],
             gt_cdrs: Optional[Sequence[float]] = None,
             names: Optional[Sequence[str]] = None) -> MetricsReport:
    if len(pred_masks) != len(gt_masks):
        raise DataError(f"{len(pred_masks)} predictions for {len(gt_masks)} ground truths")
    if gt_cdrs is not None and len(gt_cdrs) != len(gt_masks):
        raise DataError("CDR list length does not match masks")
    names = list(names) if names is not None else [f"{i:04d}" for i in range(len(gt_masks))]
    rows = []
    for i, (p, g) in enumerate(zip(pred_masks, gt_masks)):
        cdr_gt = float(gt_cdrs[i]) if gt_cdrs is not None else vertical_cdr(g)
        cdr_pred = _safe_cdr(p)
        rows.append({
            "E_disc": overlap_error(p, g, "disc"),
            "E_cup": overlap_error(p, g, "cup"),
            "E_rim": overlap_error(p, g, "rim"),
            "BLE_disc": ble(disc_region(p), disc_region(g))[0],
            "BLE_cup": ble(cup_region(p), cup_region(g))[0],
            "CDR_pred": cdr_pred,
            "CDR_gt": cdr_gt,
            "CDR_err": abs(cdr_pred - cdr_gt),
        })
    return MetricsReport(names, rows, summarize(rows))
