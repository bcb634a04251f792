"""One-pass evaluation: center-error precision and overlap success curves.

Conventions (fixed): frame 1 is excluded from scoring (its box is given);
precision@T counts center error <= T over integer thresholds 0..50 px;
success@T counts IoU strictly greater than T over the 21 thresholds
0.00, 0.05, ..., 1.00; AUC is the mean of those 21 samples, so a perfect
tracker scores 20/21 (the IoU > 1.0 sample is always zero).
"""

from dataclasses import dataclass

import numpy as np

from .sampling import iou

PRECISION_THRESHOLDS = np.arange(0, 51)
SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)


def center_error(pred, gt):
    """Euclidean distance between box centers, in pixels."""
    px = pred[0] + pred[2] / 2.0
    py = pred[1] + pred[3] / 2.0
    gx = gt[0] + gt[2] / 2.0
    gy = gt[1] + gt[3] / 2.0
    return float(np.hypot(px - gx, py - gy))


@dataclass
class EvalResult:
    center_errors: np.ndarray    # per scored frame
    overlaps: np.ndarray         # per scored frame
    precision_curve: np.ndarray  # at PRECISION_THRESHOLDS
    success_curve: np.ndarray    # at SUCCESS_THRESHOLDS
    precision_at_20: float
    auc: float


def evaluate_ope(pred_boxes, gt_boxes):
    """Score equal-length box sequences; frame 1 excluded."""
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if len(pred_boxes) != len(gt_boxes):
        raise ValueError(f"prediction has {len(pred_boxes)} frames but ground "
                         f"truth has {len(gt_boxes)}")
    if len(pred_boxes) < 2:
        raise ValueError("need at least two frames (frame 1 is not scored)")
    errors = np.array([center_error(p, g)
                       for p, g in zip(pred_boxes[1:], gt_boxes[1:])])
    overlaps = np.array([iou(p, g)
                         for p, g in zip(pred_boxes[1:], gt_boxes[1:])])
    precision = np.array([(errors <= t).mean() for t in PRECISION_THRESHOLDS])
    success = np.array([(overlaps > t).mean() for t in SUCCESS_THRESHOLDS])
    return EvalResult(center_errors=errors, overlaps=overlaps,
                      precision_curve=precision, success_curve=success,
                      precision_at_20=float(precision[20]),
                      auc=float(success.mean()))


def curves_text(result):
    """Plain-text tables: one 'threshold value' line per sample."""
    lines = ["# precision: center-error threshold (px) -> fraction of frames"]
    for t, v in zip(PRECISION_THRESHOLDS, result.precision_curve):
        lines.append(f"precision {t:d} {v:.6f}")
    lines.append("# success: overlap threshold -> fraction of frames")
    for t, v in zip(SUCCESS_THRESHOLDS, result.success_curve):
        lines.append(f"success {t:.2f} {v:.6f}")
    lines.append(f"precision_at_20 {result.precision_at_20:.6f}")
    lines.append(f"auc {result.auc:.6f}")
    lines.append(f"mean_center_error {result.center_errors.mean():.6f}")
    lines.append(f"mean_overlap {result.overlaps.mean():.6f}")
    return "\n".join(lines) + "\n"


@dataclass
class RunSummary:
    """One named tracking run for side-by-side comparison."""
    name: str
    result: EvalResult
    mean_iterations: float = 0.0
    conv_passes_per_frame: float = 1.0


def compare_runs(runs):
    """Tabulate precision@20, AUC, mean update iterations per frame, and conv
    passes per frame for two or more named runs. Returns the table string."""
    if len(runs) < 2:
        raise ValueError("comparison needs at least two runs")
    header = f"{'run':<16} {'prec@20':>8} {'auc':>8} {'iters/frame':>12} {'conv/frame':>11}"
    lines = [header, "-" * len(header)]
    for run in runs:
        lines.append(f"{run.name:<16} {run.result.precision_at_20:>8.4f} "
                     f"{run.result.auc:>8.4f} {run.mean_iterations:>12.4f} "
                     f"{run.conv_passes_per_frame:>11.2f}")
    return "\n".join(lines) + "\n"
