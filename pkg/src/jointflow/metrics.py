"""Flow and segmentation metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import FlowField, InputError, LabelProbMap

# KITTI outlier rule: EPE above 3 px and above 5 % of the true magnitude
OUTLIER_ABS = 3.0
OUTLIER_REL = 0.05


@dataclass
class MetricsReport:
    flBg: float = float("nan")
    flFg: float = float("nan")
    flAll: float = float("nan")
    epeAll: float = float("nan")
    iouPerClass: list = field(default_factory=list)
    meanIou: float = float("nan")
    noc: "MetricsReport | None" = None

    def lines(self, prefix: str = "") -> list:
        out = []
        for name in ("flBg", "flFg", "flAll", "epeAll", "meanIou"):
            v = getattr(self, name)
            if not np.isnan(v):
                out.append(f"{prefix}{name} = {v:.6f}")
        if self.iouPerClass:
            vals = " ".join("nan" if np.isnan(v) else f"{v:.6f}" for v in self.iouPerClass)
            out.append(f"{prefix}iouPerClass = {vals}")
        if self.noc is not None:
            out.extend(self.noc.lines(prefix="noc." + prefix))
        return out

    def to_text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def _pct(flags: np.ndarray) -> float:
    return float(100.0 * flags.mean()) if flags.size else float("nan")


def _flow_stats(est: FlowField, gt: FlowField, fg: np.ndarray, keep: np.ndarray) -> MetricsReport:
    if not keep.any():
        raise InputError("no valid ground-truth pixels to evaluate")
    epe = np.hypot(est.u - gt.u, est.v - gt.v)
    mag = np.hypot(gt.u, gt.v)
    out = (epe > OUTLIER_ABS) & (epe > OUTLIER_REL * mag)
    return MetricsReport(
        flBg=_pct(out[keep & ~fg]),
        flFg=_pct(out[keep & fg]),
        flAll=_pct(out[keep]),
        epeAll=float(epe[keep].mean()),
    )


def evaluate_flow(est: FlowField, gt: FlowField, fg_mask=None, occ_mask=None) -> MetricsReport:
    """Outlier percentages and mean endpoint error over valid ground-truth pixels.

    Estimated pixels marked invalid are scored with zero flow.  When
    ``occ_mask`` is given the report also carries the non-occluded restriction
    in ``noc``.
    """
    if est.shape != gt.shape:
        raise InputError(f"flow shapes differ: {est.shape} vs {gt.shape}")
    fg = np.zeros(gt.shape, dtype=bool) if fg_mask is None else np.asarray(fg_mask, dtype=bool)
    if fg.shape != gt.shape:
        raise InputError("foreground mask does not match the flow size")
    rep = _flow_stats(est, gt, fg, gt.valid)
    if occ_mask is not None:
        occ = np.asarray(occ_mask, dtype=bool)
        if occ.shape != gt.shape:
            raise InputError("occlusion mask does not match the flow size")
        rep.noc = _flow_stats(est, gt, fg, gt.valid & ~occ)
    return rep


def in_frame(gt: FlowField) -> np.ndarray:
    """Pixels whose true target stays inside the image."""
    h, w = gt.shape
    ys, xs = np.mgrid[0:h, 0:w]
    tx, ty = xs + gt.u, ys + gt.v
    return gt.valid & (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, classes: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64).ravel()
    gt = np.asarray(gt, dtype=np.int64).ravel()
    return np.bincount(gt * classes + pred, minlength=classes * classes).reshape(classes, classes)


def evaluate_iou(est, gt_labels, classes: int | None = None) -> MetricsReport:
    """Per-class IoU of the argmax labelling; the mean runs over classes present in the ground truth."""
    pred = est.argmax() if isinstance(est, LabelProbMap) else np.asarray(est)
    gt = np.asarray(gt_labels, dtype=np.int64)
    if pred.shape != gt.shape:
        raise InputError(f"label shapes differ: {pred.shape} vs {gt.shape}")
    if classes is None:
        classes = est.classes if isinstance(est, LabelProbMap) else int(max(pred.max(), gt.max())) + 1
    if gt.min() < 0 or gt.max() >= classes:
        raise InputError("ground-truth class id outside the class table")
    cm = confusion_matrix(pred, gt, classes)
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    present = cm.sum(axis=1) > 0
    return MetricsReport(iouPerClass=[float(v) for v in iou], meanIou=float(iou[present].mean()))


def occlusion_f1(est, gt) -> float:
    est = np.asarray(est, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    tp = np.count_nonzero(est & gt)
    denom = np.count_nonzero(est) + np.count_nonzero(gt)
    return 1.0 if denom == 0 else 2.0 * tp / denom
