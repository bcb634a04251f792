"""First-frame linear bounding-box refinement.

Targets use the usual center-delta parameterization: for a sample box p and
ground truth g,
    dx = (gcx - pcx) / pw,  dy = (gcy - pcy) / ph,
    dw = log(gw / pw),      dh = log(gh / ph),
and refinement inverts it exactly. Fitting is ridge regression on feature
vectors standardized with the statistics of the fitting set; it happens once,
on the first frame only.
"""

import numpy as np

from .sampling import iou_many


def box_deltas(boxes, gt):
    """Regression targets (N, 4) from sample boxes to one ground-truth box."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    pcx = boxes[:, 0] + boxes[:, 2] / 2.0
    pcy = boxes[:, 1] + boxes[:, 3] / 2.0
    gcx = gt[0] + gt[2] / 2.0
    gcy = gt[1] + gt[3] / 2.0
    return np.column_stack([(gcx - pcx) / boxes[:, 2],
                            (gcy - pcy) / boxes[:, 3],
                            np.log(gt[2] / boxes[:, 2]),
                            np.log(gt[3] / boxes[:, 3])])


def apply_deltas(boxes, deltas):
    """Invert box_deltas: shift centers by dx*w, dy*h and scale by exp."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    cx = boxes[:, 0] + boxes[:, 2] / 2.0 + deltas[:, 0] * boxes[:, 2]
    cy = boxes[:, 1] + boxes[:, 3] / 2.0 + deltas[:, 1] * boxes[:, 3]
    w = boxes[:, 2] * np.exp(deltas[:, 2])
    h = boxes[:, 3] * np.exp(deltas[:, 3])
    return np.column_stack([cx - w / 2.0, cy - h / 2.0, w, h])


class BBoxRegressor:
    """Ridge regression from pooled conv features to box deltas.

    Predicted deltas are clamped before application: the regressor refines an
    accepted detection, it must never move it far. The log-scale clamp is
    much tighter than the translation clamp because scale corrections feed
    back into the next frame's candidates and small biases compound.
    """

    def __init__(self, ridge_lambda=1000.0, min_iou=0.6, min_samples=4,
                 max_delta_translation=0.25, max_delta_scale=0.02):
        self.ridge_lambda = ridge_lambda
        self.min_iou = min_iou
        self.min_samples = min_samples
        self.max_delta_translation = max_delta_translation
        self.max_delta_scale = max_delta_scale
        self.weight = None   # (feature_dim, 4)
        self.bias = None     # (4,)
        self.feat_mean = None
        self.feat_std = None
        self.fitted = False

    def fit(self, features, sample_boxes, gt):
        """Fit on the samples overlapping gt by more than min_iou. With too
        few qualifying samples the regressor stays unfitted (refine is then
        the identity)."""
        features = np.asarray(features, dtype=np.float64)
        sample_boxes = np.asarray(sample_boxes, dtype=np.float64).reshape(-1, 4)
        keep = iou_many(sample_boxes, gt) > self.min_iou
        if keep.sum() < self.min_samples:
            self.fitted = False
            return self
        phi = features[keep]
        targets = box_deltas(sample_boxes[keep], gt)
        self.feat_mean = phi.mean(axis=0)
        self.feat_std = phi.std(axis=0) + 1e-8
        z = (phi - self.feat_mean) / self.feat_std
        # the intercept column is ridge-penalized like the weights: with no
        # usable signal the regressor must collapse to the identity, not to a
        # constant offset (sample clipping skews the raw target mean)
        a = np.hstack([z, np.ones((z.shape[0], 1))])
        reg = self.ridge_lambda * np.eye(a.shape[1])
        coeff = np.linalg.solve(a.T @ a + reg, a.T @ targets)
        self.weight = coeff[:-1]
        self.bias = coeff[-1]
        self.fitted = True
        return self

    def predict_deltas(self, features):
        if not self.fitted:
            raise RuntimeError("regressor is not fitted")
        z = (np.asarray(features, dtype=np.float64) - self.feat_mean) / self.feat_std
        return z @ self.weight + self.bias

    def refine(self, features, box, frame_hw=None):
        """Refined copy of box; the input box when unfitted. Output is kept
        inside the frame when its extent is given."""
        box = np.asarray(box, dtype=np.float64).reshape(-1, 4)
        if not self.fitted:
            return box[0] if box.shape[0] == 1 else box
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features[None]
        deltas = self.predict_deltas(features)
        deltas[:, :2] = np.clip(deltas[:, :2], -self.max_delta_translation,
                                self.max_delta_translation)
        deltas[:, 2:] = np.clip(deltas[:, 2:], -self.max_delta_scale,
                                self.max_delta_scale)
        out = apply_deltas(box, deltas)
        if frame_hw is not None:
            from .sampling import clip_box_to_frame
            out = clip_box_to_frame(out, frame_hw)
        return out[0] if out.shape[0] == 1 else out

    def weight_norm(self):
        return float(np.linalg.norm(self.weight)) if self.fitted else 0.0
