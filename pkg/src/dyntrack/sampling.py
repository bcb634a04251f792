"""Box geometry and sample management around a tracked target.

Boxes are float arrays (x, y, w, h) with (x, y) the top-left corner in pixel
coordinates; batches are (N, 4). Candidate jitter follows the usual recipe:
Gaussian center translation scaled by the box size and a log-scale factor
scale_base**g with g ~ N(0, scale_std).
"""

from collections import deque

import numpy as np

from .roi import map_boxes_to_rois

POS_IOU = 0.7  # t1: candidates above this are positives
NEG_IOU = 0.5  # t2: candidates below this are negatives


class BufferEmptyError(RuntimeError):
    """Raised when collecting from a buffer with no stored samples."""


def validate_box(box):
    x, y, w, h = (float(v) for v in box)
    if w <= 0 or h <= 0:
        raise ValueError(f"box ({x}, {y}, {w}, {h}) has non-positive extent")
    return np.array([x, y, w, h])


def iou(a, b):
    """Intersection over union of two (x, y, w, h) boxes, in [0, 1]."""
    ax, ay, aw, ah = (float(v) for v in a)
    bx, by, bw, bh = (float(v) for v in b)
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def iou_many(boxes, ref):
    """IoU of each row of (N, 4) boxes against one reference box."""
    boxes = np.asarray(boxes, dtype=np.float64)
    rx, ry, rw, rh = (float(v) for v in ref)
    iw = np.minimum(boxes[:, 0] + boxes[:, 2], rx + rw) - np.maximum(boxes[:, 0], rx)
    ih = np.minimum(boxes[:, 1] + boxes[:, 3], ry + rh) - np.maximum(boxes[:, 1], ry)
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = boxes[:, 2] * boxes[:, 3] + rw * rh - inter
    return inter / union


def clip_box_to_frame(boxes, frame_hw, min_size=2.0):
    """Clamp (N, 4) boxes inside a (H, W) frame, keeping a minimum size."""
    h, w = frame_hw
    boxes = np.array(boxes, dtype=np.float64)
    boxes[:, 2] = np.clip(boxes[:, 2], min_size, w)
    boxes[:, 3] = np.clip(boxes[:, 3], min_size, h)
    boxes[:, 0] = np.clip(boxes[:, 0], 0.0, w - boxes[:, 2])
    boxes[:, 1] = np.clip(boxes[:, 1], 0.0, h - boxes[:, 3])
    return boxes


def jitter_boxes(prev, n, trans_std_factor, scale_std, rng, scale_base=1.05,
                 frame_hw=None):
    """n boxes around prev: jittered center, jittered log-scale, same aspect."""
    x, y, w, h = (float(v) for v in prev)
    cx, cy = x + w / 2.0, y + h / 2.0
    size = (w + h) / 2.0
    centers = np.array([cx, cy]) + rng.standard_normal((n, 2)) * trans_std_factor * size
    scales = scale_base ** (rng.standard_normal(n) * scale_std)
    ws = w * scales
    hs = h * scales
    boxes = np.column_stack([centers[:, 0] - ws / 2.0, centers[:, 1] - hs / 2.0,
                             ws, hs])
    if frame_hw is not None:
        boxes = clip_box_to_frame(boxes, frame_hw)
    return boxes


def draw_candidates(prev, n, trans_std_factor, scale_std, rng, scale_base=1.05,
                    frame_hw=None):
    """Candidate boxes for one frame, clipped to the frame when given."""
    if n < 1:
        raise ValueError(f"need at least one candidate, got {n}")
    return jitter_boxes(prev, n, trans_std_factor, scale_std, rng,
                        scale_base=scale_base, frame_hw=frame_hw)


def label_samples(boxes, gt, t1=POS_IOU, t2=NEG_IOU):
    """Partition boxes by IoU against gt: (> t1, < t2, the gap in between)."""
    if t1 <= t2:
        raise ValueError(f"thresholds need t1 > t2, got t1={t1} t2={t2}")
    boxes = np.asarray(boxes, dtype=np.float64)
    overlap = iou_many(boxes, gt)
    pos = boxes[overlap > t1]
    neg = boxes[overlap < t2]
    mid = boxes[(overlap >= t2) & (overlap <= t1)]
    return pos, neg, mid


def draw_labeled_samples(gt, n_pos, n_neg, frame_hw, rng,
                         pos_trans=0.1, pos_scale_std=0.05,
                         neg_trans=1.0, neg_scale_std=0.5,
                         t1=POS_IOU, t2=NEG_IOU, max_rounds=50):
    """Rejection-sample labeled training boxes around a ground-truth box.

    Positives come from tight jitter filtered to IoU > t1; negatives mix wide
    jitter, uniform frame boxes, and wrong-scale boxes centered on the target
    (these teach the scale cue), all filtered to IoU < t2. Returns (pos, neg);
    pos may fall short of n_pos if the geometry makes t1 unreachable.
    """
    h, w = frame_hw
    gt = np.asarray(gt, dtype=np.float64)
    pos, neg = [], []
    for _ in range(max_rounds):
        if len(pos) < n_pos:
            cand = jitter_boxes(gt, max(n_pos, 16), pos_trans, pos_scale_std,
                                rng, frame_hw=frame_hw)
            pos.extend(cand[iou_many(cand, gt) > t1])
        if len(neg) < n_neg:
            cand = jitter_boxes(gt, max(n_neg, 32), neg_trans, neg_scale_std,
                                rng, frame_hw=frame_hw)
            uni = np.column_stack([
                rng.uniform(0, w * 0.8, n_neg), rng.uniform(0, h * 0.8, n_neg),
                rng.uniform(max(4.0, gt[2] * 0.4), max(8.0, gt[2] * 1.4), n_neg),
                rng.uniform(max(4.0, gt[3] * 0.4), max(8.0, gt[3] * 1.4), n_neg)])
            n_scale = max(4, n_neg // 4)
            factors = np.where(rng.random(n_scale) < 0.5,
                               rng.uniform(0.35, 0.68, n_scale),
                               rng.uniform(1.45, 2.2, n_scale))
            cx = gt[0] + gt[2] / 2.0 + rng.normal(0, 0.05 * gt[2], n_scale)
            cy = gt[1] + gt[3] / 2.0 + rng.normal(0, 0.05 * gt[3], n_scale)
            ws, hs = gt[2] * factors, gt[3] * factors
            scale_mism = np.column_stack([cx - ws / 2, cy - hs / 2, ws, hs])
            cand = np.vstack([cand, clip_box_to_frame(uni, frame_hw),
                              clip_box_to_frame(scale_mism, frame_hw)])
            neg.extend(cand[iou_many(cand, gt) < t2])
        if len(pos) >= n_pos and len(neg) >= n_neg:
            break
    return (np.array(pos[:n_pos]).reshape(-1, 4),
            np.array(neg[:n_neg]).reshape(-1, 4))


def top_k_by_score(scores, top_k):
    """Indices of the top_k scores, descending; ties keep input order."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    return order[:top_k]


def hard_negative_mine(network, featmap, negatives, top_k, branch=0):
    """Keep the top_k negative boxes by target-class margin under the current
    network (the most confusing negatives)."""
    negatives = np.asarray(negatives, dtype=np.float64).reshape(-1, 4)
    if top_k > len(negatives):
        raise ValueError(f"top_k {top_k} exceeds negative count {len(negatives)}")
    stride = network.spec.feature_stride()
    rois = map_boxes_to_rois(negatives, stride, featmap.shape[1:])
    logits = network.score_rois(featmap, rois, branch=branch, mode="infer")
    keep = top_k_by_score(logits[:, 1] - logits[:, 0], top_k)
    return negatives[keep]


class SampleBuffer:
    """Ring buffer of per-frame sample batches, oldest frame evicted first.

    A batch is whatever the caller stores per frame (boxes, labels, cached
    features); the buffer only manages frame-granular retention.
    """

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError(f"buffer capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._frames = deque()

    def __len__(self):
        return len(self._frames)

    def push(self, frame_id, batch):
        self._frames.append((frame_id, batch))
        while len(self._frames) > self.capacity:
            self._frames.popleft()

    def frame_ids(self):
        return [fid for fid, _ in self._frames]

    def collect(self):
        """All stored batches, oldest first."""
        if not self._frames:
            raise BufferEmptyError("no stored samples")
        return [batch for _, batch in self._frames]
