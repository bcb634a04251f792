"""Online tracking loop with threshold-gated dynamic fine-tuning.

Per frame: one shared conv pass, candidate boxes around the previous target
scored from the shared map, argmax taken as the target. A frame whose best
margin clears the score threshold m contributes fresh samples to the buffer;
a frame below m triggers fine-tuning of the FC layers on buffered samples,
where iteration stops as soon as the post-step batch loss drops under the
loss threshold (the "dynamic" policy) or after the fixed cap (the baseline
"fixed10" policy). Conv-trunk parameters never change after offline training.
"""

from dataclasses import dataclass, field

import numpy as np

from .bbox_regression import BBoxRegressor
from .frames import preprocess_frame
from .network import load_checkpoint
from .nn import SGD, softmax_cross_entropy
from .roi import map_boxes_to_rois
from .sampling import (NEG_IOU, POS_IOU, BufferEmptyError, SampleBuffer,
                       draw_candidates, draw_labeled_samples, jitter_boxes,
                       top_k_by_score)

POLICIES = ("dynamic", "fixed10")


@dataclass
class TrackConfig:
    m: float = 0.0                 # score threshold gating updates
    loss_threshold: float = 0.01   # stop updating below this batch loss
    max_update_iters: int = 10
    first_frame_iters: int = 30
    lr_first: float = 0.0005
    lr_online: float = 0.0015
    momentum: float = 0.9
    weight_decay: float = 0.0005
    candidates: int = 256
    trans_std: float = 0.6
    scale_std: float = 0.5
    scale_base: float = 1.05
    first_pos: int = 50
    first_neg: int = 200
    online_pos: int = 20
    online_neg: int = 100
    buffer_capacity: int = 20
    batch_pos: int = 32
    mine_pool: int = 128
    mine_keep: int = 32
    t1: float = POS_IOU
    t2: float = NEG_IOU
    pos_trans: float = 0.1
    pos_scale_std: float = 0.05
    neg_trans: float = 1.0
    neg_scale_std: float = 0.5
    working_size: int = 300        # 0: track at native frame resolution
    policy: str = "dynamic"
    head_init_std: float = 0.01
    bbreg_samples: int = 128
    bbreg_lambda: float = 1000.0
    bbreg_iou: float = 0.6
    bbreg_trans: float = 0.3
    bbreg_scale_std: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.loss_threshold <= 0:
            raise ValueError(f"loss threshold must be > 0, got {self.loss_threshold}")
        if self.max_update_iters < 1:
            raise ValueError(f"max_update_iters must be >= 1, got "
                             f"{self.max_update_iters}")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got "
                             f"'{self.policy}'")


@dataclass
class FrameResult:
    box: np.ndarray        # image-coordinate x, y, w, h
    score: float           # best pre-update margin (the decision score)
    updated: bool
    iterations_used: int
    losses: list = field(default_factory=list)


def score_of(logits):
    """Margin of one (2,) logit pair: target minus background."""
    logits = np.asarray(logits).reshape(2)
    return float(logits[1] - logits[0])


def margins(logits):
    return np.asarray(logits[:, 1] - logits[:, 0], dtype=np.float64)


def run_update_loop(step_fn, loss_threshold, max_iters, policy="dynamic"):
    """Drive fine-tuning iterations under a stopping policy.

    step_fn performs one update step and returns the post-step batch loss.
    dynamic: stop once the loss is below loss_threshold (at least one
    iteration always runs). fixed10: always run max_iters iterations.
    Returns (iterations_used, final_loss, loss_trace).
    """
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}, got '{policy}'")
    losses = []
    for _ in range(max_iters):
        loss = float(step_fn())
        losses.append(loss)
        if policy == "dynamic" and loss < loss_threshold:
            break
    return len(losses), losses[-1], losses


class TrackerState:
    """Everything the per-frame loop mutates for one tracked sequence."""

    def __init__(self, net, cfg):
        self.net = net
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        net.swap_head(1, init_std=cfg.head_init_std, rng=self.rng)
        self.buffer = SampleBuffer(cfg.buffer_capacity)
        self.opt = SGD(cfg.lr_first, cfg.weight_decay, cfg.momentum)
        self.regressor = BBoxRegressor(cfg.bbreg_lambda, cfg.bbreg_iou)
        self.prev_box = None        # working coordinates
        self.scale = 1.0
        self.frame_index = 0
        self.first_batch = None
        self.results = []
        self.init_iterations = 0
        self.trunk_fingerprint = net.trunk_fingerprint()

    def working_size(self):
        return self.cfg.working_size if self.cfg.working_size else None


def _collect_labeled_features(state, featmap, frame_hw, around_box, n_pos, n_neg):
    """Draw labeled boxes around a target and cache their pooled features."""
    cfg = state.cfg
    pos, neg = draw_labeled_samples(
        around_box, n_pos, n_neg, frame_hw, state.rng,
        pos_trans=cfg.pos_trans, pos_scale_std=cfg.pos_scale_std,
        neg_trans=cfg.neg_trans, neg_scale_std=cfg.neg_scale_std,
        t1=cfg.t1, t2=cfg.t2)
    stride = state.net.spec.feature_stride()
    feats = state.net.extract_features(
        featmap, map_boxes_to_rois(np.vstack([pos, neg]), stride,
                                   featmap.shape[1:]))
    return {"pos": feats[:len(pos)], "neg": feats[len(pos):],
            "pos_boxes": pos, "neg_boxes": neg}


def _update_step(state, pos_feats, neg_feats):
    """One SGD iteration on sampled positives plus mined hard negatives.
    Returns the post-step loss of the same batch (dropout off)."""
    cfg = state.cfg
    rng = state.rng
    sel_pos = rng.choice(len(pos_feats), size=min(cfg.batch_pos, len(pos_feats)),
                         replace=len(pos_feats) < cfg.batch_pos)
    pool = rng.choice(len(neg_feats), size=min(cfg.mine_pool, len(neg_feats)),
                      replace=False)
    pool_logits = state.net.score_features(neg_feats[pool], mode="infer")
    hard = pool[top_k_by_score(margins(pool_logits),
                               min(cfg.mine_keep, len(pool)))]
    batch = np.vstack([pos_feats[sel_pos], neg_feats[hard]])
    labels = np.concatenate([np.ones(len(sel_pos), dtype=np.intp),
                             np.zeros(len(hard), dtype=np.intp)])
    logits = state.net.score_features(batch, mode="train", rng=rng)
    _, grad = softmax_cross_entropy(logits, labels)
    state.net.backward_scores(grad, into_trunk=False)
    state.opt.step(state.net.fc_trunk_params() + state.net.branch_params(0))
    after = state.net.score_features(batch, mode="infer")
    loss, _ = softmax_cross_entropy(after, labels)
    return loss


def init_first_frame(state, frame, gt, cfg=None):
    """Adapt the fresh head to the first frame and fit the box regressor."""
    cfg = cfg or state.cfg
    tensor, scale = preprocess_frame(frame, state.working_size())
    frame_hw = tensor.shape[1:]
    gt = np.asarray(gt, dtype=np.float64) * scale
    if (gt[2] <= 0 or gt[3] <= 0 or gt[0] + gt[2] <= 0 or gt[1] + gt[3] <= 0
            or gt[0] >= frame_hw[1] or gt[1] >= frame_hw[0]):
        raise ValueError(f"ground-truth box {tuple(gt)} lies outside the frame")
    state.scale = scale
    featmap = state.net.forward_shared(tensor)
    batch = _collect_labeled_features(state, featmap, frame_hw, gt,
                                      cfg.first_pos, cfg.first_neg)
    state.first_batch = batch
    state.buffer.push(0, batch)
    state.opt.lr = cfg.lr_first
    iters, _, losses = run_update_loop(
        lambda: _update_step(state, batch["pos"], batch["neg"]),
        cfg.loss_threshold, cfg.first_frame_iters, cfg.policy)
    state.init_iterations = iters
    state.opt.lr = cfg.lr_online
    # box regression: trained on first-frame samples only
    reg_boxes = jitter_boxes(gt, cfg.bbreg_samples, cfg.bbreg_trans,
                             cfg.bbreg_scale_std, state.rng, frame_hw=frame_hw)
    stride = state.net.spec.feature_stride()
    reg_feats = state.net.extract_features(
        featmap, map_boxes_to_rois(reg_boxes, stride, featmap.shape[1:]))
    state.regressor.fit(reg_feats, reg_boxes, gt)
    state.prev_box = gt
    state.frame_index = 1
    state.results.append(FrameResult(box=gt / scale, score=0.0, updated=False,
                                     iterations_used=0, losses=losses))
    return state


def fine_tune_online(state, cfg=None):
    """Update the FC layers on buffered samples until the batch loss falls
    under the loss threshold or the iteration cap; one iteration minimum.
    Returns (iterations_used, final_loss, loss_trace)."""
    cfg = cfg or state.cfg
    try:
        batches = state.buffer.collect()
    except BufferEmptyError:
        batches = [state.first_batch]
    pos_feats = np.vstack([b["pos"] for b in batches])
    neg_feats = np.vstack([b["neg"] for b in batches])
    return run_update_loop(lambda: _update_step(state, pos_feats, neg_feats),
                           cfg.loss_threshold, cfg.max_update_iters, cfg.policy)


def track_frame(state, frame, cfg=None):
    """Track one frame; always emits a box (see module docstring)."""
    cfg = cfg or state.cfg
    tensor, scale = preprocess_frame(frame, state.working_size())
    frame_hw = tensor.shape[1:]
    featmap = state.net.forward_shared(tensor)
    candidates = draw_candidates(state.prev_box, cfg.candidates, cfg.trans_std,
                                 cfg.scale_std, state.rng,
                                 scale_base=cfg.scale_base, frame_hw=frame_hw)
    stride = state.net.spec.feature_stride()
    rois = map_boxes_to_rois(candidates, stride, featmap.shape[1:])
    feats = state.net.extract_features(featmap, rois)
    scores = margins(state.net.score_features(feats, mode="infer"))
    best = int(np.argmax(scores))  # ties: lowest candidate index
    score = float(scores[best])
    if score > cfg.m:
        box = candidates[best]
        box = state.regressor.refine(feats[best], box, frame_hw=frame_hw)
        batch = _collect_labeled_features(state, featmap, frame_hw, box,
                                          cfg.online_pos, cfg.online_neg)
        state.buffer.push(state.frame_index, batch)
        result = FrameResult(box=box / scale, score=score, updated=False,
                             iterations_used=0)
    else:
        iters, _, losses = fine_tune_online(state, cfg)
        rescored = margins(state.net.score_features(feats, mode="infer"))
        best = int(np.argmax(rescored))
        box = candidates[best]
        result = FrameResult(box=box / scale, score=score, updated=True,
                             iterations_used=iters, losses=losses)
    state.prev_box = box
    state.frame_index += 1
    state.results.append(result)
    return result


def run_sequence(net_or_checkpoint, frames, gt_first, cfg):
    """Track a whole sequence from its first-frame ground truth.

    Returns (boxes (T, 4) in image coordinates, TrackerState). frames is a
    sequence of (H, W, 3) images; gt_first the frame-1 box.
    """
    if len(frames) < 1:
        raise ValueError("sequence needs at least one frame")
    net = net_or_checkpoint
    if isinstance(net, (str, bytes)) or hasattr(net, "__fspath__"):
        net = load_checkpoint(net)
    state = TrackerState(net, cfg)
    init_first_frame(state, frames[0], gt_first, cfg)
    boxes = [np.asarray(gt_first, dtype=np.float64)]
    for frame in frames[1:]:
        boxes.append(track_frame(state, frame, cfg).box)
    return np.array(boxes), state
