"""Reconstruction and temporal-consistency metrics.

L1 metrics are channel-summed then pixel-averaged over their support (hole
or visible set), which keeps values resolution-independent; PSNR uses the
per-entry MSE over hole pixels.  The weighted total combines hole, valid,
flow and warp terms with weights 100/50/20/20 and is flagged partial when
the flow term is unavailable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError, UndefinedMetricError
from .temporal import backward_warp

PSNR_CAP = 99.0

W_HOLE, W_VALID, W_FLOW, W_WARP = 100.0, 50.0, 20.0, 20.0


def _check(pred, gt, m):
    pred = np.asarray(pred, np.float64)
    gt = np.asarray(gt, np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"shapes differ: {pred.shape} vs {gt.shape}")
    if m.shape != pred.shape[:2]:
        raise ShapeMismatchError(f"mask {m.shape} does not match {pred.shape}")
    return pred, gt, np.asarray(m) > 0


def l_hole(pred: np.ndarray, gt: np.ndarray, m: np.ndarray) -> float:
    """Mean channel-summed absolute error over hole pixels (0 if no hole)."""
    pred, gt, vis = _check(pred, gt, m)
    hole = ~vis
    if not hole.any():
        return 0.0
    gap = np.abs(pred - gt)
    if gap.ndim == 3:
        gap = gap.sum(axis=2)
    return float(gap[hole].mean())


def l_valid(pred: np.ndarray, gt: np.ndarray, m: np.ndarray) -> float:
    """Mean channel-summed absolute error over visible pixels."""
    pred, gt, vis = _check(pred, gt, m)
    if not vis.any():
        return 0.0
    gap = np.abs(pred - gt)
    if gap.ndim == 3:
        gap = gap.sum(axis=2)
    return float(gap[vis].mean())


def psnr_hole(pred: np.ndarray, gt: np.ndarray, m: np.ndarray) -> float:
    """PSNR (dB) over hole pixels; identical content reports the 99 dB cap."""
    pred, gt, vis = _check(pred, gt, m)
    hole = ~vis
    if not hole.any():
        raise UndefinedMetricError("psnr_hole needs at least one hole pixel")
    diff = (pred - gt)[hole]
    mse = float((diff * diff).mean())
    if mse <= 0.0:
        return PSNR_CAP
    return min(float(10.0 * np.log10(1.0 / mse)), PSNR_CAP)


def flow_metric(flow_pred: np.ndarray, flow_ref: np.ndarray,
                gt_t: np.ndarray, gt_prev: np.ndarray) -> float:
    """Flow accuracy against an externally supplied reference flow.

    Sum of (a) mean component-summed L1 between predicted and reference flow
    and (b) mean channel-summed L1 between the current ground truth and the
    previous one warped by the predicted flow (invalid warps excluded).
    """
    if flow_pred.shape != flow_ref.shape:
        raise ShapeMismatchError("flow shapes differ")
    term1 = float(np.abs(flow_ref - flow_pred).sum(axis=0).mean())
    warped, valid = backward_warp(gt_prev, flow_pred)
    gap = np.abs(np.asarray(gt_t, np.float64) - warped)
    if gap.ndim == 3:
        gap = gap.sum(axis=2)
    sup = valid > 0
    term2 = float(gap[sup].mean()) if sup.any() else 0.0
    return term1 + term2


@dataclass
class FrameMetrics:
    frame: int
    l_hole: float
    l_valid: float
    warp_err: float
    psnr_hole: float


@dataclass
class MetricReport:
    """Aggregate metric values plus per-frame breakdown."""

    l_hole: float = 0.0
    l_valid: float = 0.0
    warping_error: float = 0.0
    psnr_hole: float = PSNR_CAP
    flow_term: float | None = None
    frames: list = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return self.flow_term is None

    @property
    def weighted_total(self) -> float:
        flow = self.flow_term if self.flow_term is not None else 0.0
        return (W_HOLE * self.l_hole + W_VALID * self.l_valid
                + W_FLOW * flow + W_WARP * self.warping_error)

    def to_text(self) -> str:
        lines = [
            f"l_hole = {self.l_hole:.9f}",
            f"l_valid = {self.l_valid:.9f}",
            f"warping_error = {self.warping_error:.9f}",
            f"psnr_hole = {self.psnr_hole:.9f}",
            f"flow_term = "
            + ("unavailable" if self.flow_term is None else f"{self.flow_term:.9f}"),
            f"weighted_total = {self.weighted_total:.9f}",
            f"weighted_total_partial = {str(self.partial).lower()}",
        ]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["frame,l_hole,l_valid,warp_err,psnr_hole"]
        for fm in self.frames:
            rows.append(f"{fm.frame},{fm.l_hole:.9f},{fm.l_valid:.9f},"
                        f"{fm.warp_err:.9f},{fm.psnr_hole:.9f}")
        return "\n".join(rows) + "\n"
