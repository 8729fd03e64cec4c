"""Reconstruction benchmark metrics: point-cloud precision/recall/F1,
threshold-sweep AUC, and camera rotation/translation/trajectory errors.

Camera metrics align the predicted trajectory to ground truth with a
similarity Umeyama over camera centers first (generated scale is arbitrary),
then report degrees for rotation and world units for translation; rotation
error is the geodesic angle arccos((trace(R1^T R2) - 1) / 2), clamped before
the arccos to absorb numerical drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geometry import CameraPose
from .pointcloud import NNIndex, PointCloud, umeyama


@dataclass(frozen=True)
class PcdMetrics:
    precision: float
    recall: float
    f1: float
    threshold: float


@dataclass(frozen=True)
class CamMetrics:
    rot_err_deg: float
    trans_err: float
    ate: float


def pcd_f1(pred: PointCloud, gt: PointCloud, threshold: float) -> PcdMetrics:
    """Distance-threshold precision/recall/F1 between pre-aligned clouds.

    precision: fraction of predicted points within ``threshold`` of some
    ground-truth point; recall: the converse; f1: harmonic mean (0 when
    both are 0).
    """
    if threshold <= 0:
        raise InputError(f"threshold must be positive, got {threshold}")
    if gt.is_empty:
        raise InputError("ground-truth cloud must be non-empty")
    if pred.is_empty:
        return PcdMetrics(0.0, 0.0, 0.0, threshold)
    gt_index = NNIndex(gt.positions)
    pred_index = NNIndex(pred.positions)
    precision = float((gt_index.distances(pred.positions) <= threshold).mean())
    recall = float((pred_index.distances(gt.positions) <= threshold).mean())
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PcdMetrics(precision, recall, f1, threshold)


def pcd_sweep(
    pred: PointCloud, gt: PointCloud, thresholds: list[float]
) -> list[PcdMetrics]:
    """Threshold sweep sharing one pair of NN queries across all thresholds."""
    if any(t <= 0 for t in thresholds):
        raise InputError("thresholds must be positive")
    if sorted(thresholds) != list(thresholds):
        raise InputError("thresholds must be ascending")
    if gt.is_empty:
        raise InputError("ground-truth cloud must be non-empty")
    if pred.is_empty:
        return [PcdMetrics(0.0, 0.0, 0.0, t) for t in thresholds]
    d_pred = NNIndex(gt.positions).distances(pred.positions)
    d_gt = NNIndex(pred.positions).distances(gt.positions)
    out = []
    for t in thresholds:
        p = float((d_pred <= t).mean())
        r = float((d_gt <= t).mean())
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        out.append(PcdMetrics(p, r, f1, t))
    return out


def pcd_auc(pred: PointCloud, gt: PointCloud, thresholds: list[float]) -> float:
    """Trapezoidal area under the (recall, precision) curve of a threshold sweep.

    The curve starts at recall 0 carrying the lowest threshold's precision,
    then follows the sweep in ascending-threshold order; both axes live in
    [0, 1] so the area is already normalized. Matching clouds give 1.0, a
    cloud entirely beyond the largest threshold gives 0.0.
    """
    if len(thresholds) < 2:
        raise InputError(f"need at least 2 thresholds, got {len(thresholds)}")
    metrics = pcd_sweep(pred, gt, thresholds)
    recalls = [0.0] + [m.recall for m in metrics]
    precisions = [metrics[0].precision] + [m.precision for m in metrics]
    return float(np.trapezoid(precisions, recalls))


def rotation_geodesic_deg(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic angle between rotations, arccos((trace(R1^T R2) - 1) / 2).

    Near zero the arccos form loses ~8 digits to rounding, so the same angle
    is evaluated there through ||R1 - R2||_F = 2 sqrt(2) sin(theta / 2); the
    clamped arccos handles the rest of the range.
    """
    cos = min(1.0, max(-1.0, (np.trace(r1.T @ r2) - 1.0) / 2.0))
    if cos > 0.0:
        s = np.linalg.norm(r1 - r2) / (2.0 * math.sqrt(2.0))
        return math.degrees(2.0 * math.asin(min(1.0, s)))
    return math.degrees(math.acos(cos))


def cam_metrics(pred: list[CameraPose], gt: list[CameraPose]) -> CamMetrics:
    """RotErr/TransErr/ATE after similarity alignment of the trajectories.

    The predicted trajectory is aligned to ground truth by a similarity
    Umeyama over camera centers (scale on — generated videos carry no metric
    scale). RotErr is the mean geodesic angle between aligned and true
    rotations in degrees, TransErr the mean center distance, ATE the RMS
    center distance.
    """
    if len(pred) != len(gt):
        raise InputError(f"trajectory lengths differ: {len(pred)} vs {len(gt)}")
    if len(pred) < 2:
        raise InputError("need at least 2 poses")
    pred_centers = np.stack([p.center for p in pred])
    gt_centers = np.stack([g.center for g in gt])
    align = umeyama(pred_centers, gt_centers, with_scale=True)
    aligned_centers = align.apply(pred_centers)
    diffs = np.linalg.norm(aligned_centers - gt_centers, axis=1)
    rot_errs = [
        rotation_geodesic_deg(align.rotation @ p.rotation, g.rotation)
        for p, g in zip(pred, gt)
    ]
    return CamMetrics(
        rot_err_deg=float(np.mean(rot_errs)),
        trans_err=float(diffs.mean()),
        ate=float(np.sqrt(np.square(diffs).mean())),
    )


def metrics_markdown(
    sweep: list[PcdMetrics], auc: float | None, cam: CamMetrics | None
) -> str:
    """Aligned markdown table for reports; rotation in degrees, absolute
    errors after alignment."""
    lines = [
        "| threshold | precision | recall | f1 |",
        "|-----------|-----------|--------|----|",
    ]
    for m in sweep:
        lines.append(
            f"| {m.threshold:.6g} | {m.precision:.4f} | {m.recall:.4f} | {m.f1:.4f} |"
        )
    if auc is not None:
        lines.append(f"\nAUC (recall-precision sweep): {auc:.4f}")
    if cam is not None:
        lines.append(
            f"\nRotErr {cam.rot_err_deg:.4f} deg | TransErr {cam.trans_err:.6g} | "
            f"ATE {cam.ate:.6g} (after similarity alignment)"
        )
    return "\n".join(lines) + "\n"
