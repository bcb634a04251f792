"""Multi-domain offline training and the synthetic video generator.

Each training video is one domain with its own head branch; iterations walk
the domains round-robin, draw one random frame, sample labeled boxes around
its ground truth, and update the shared layers plus the selected branch only.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .frames import preprocess_frame
from .nn import SGD, softmax_cross_entropy
from .roi import map_boxes_to_rois
from .sampling import NEG_IOU, POS_IOU, draw_labeled_samples

TRUNK_MIN_INPUT = 75  # smallest frame side the default conv trunk accepts


@dataclass
class Video:
    frames: list          # (H, W, 3) uint8 arrays
    boxes: np.ndarray     # (T, 4) ground-truth x, y, w, h per frame
    name: str = "video"

    def __post_init__(self):
        if len(self.frames) != len(self.boxes):
            raise ValueError(f"{self.name}: {len(self.frames)} frames but "
                             f"{len(self.boxes)} ground-truth boxes")


@dataclass
class TrainConfig:
    lr: float = 0.0001
    weight_decay: float = 0.0005
    momentum: float = 0.9
    iterations: int = 100
    batch_pos: int = 32
    batch_neg: int = 96
    t1: float = POS_IOU
    t2: float = NEG_IOU
    pos_trans: float = 0.1
    pos_scale_std: float = 0.05
    neg_trans: float = 1.0
    neg_scale_std: float = 0.5
    working_size: int = 0     # 0: train at native frame resolution
    train_trunk: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")


# ---- synthetic videos --------------------------------------------------------


def _smooth_background(rng, h, w, cell=12, lo=40, hi=110):
    """Structured noise: a coarse random grid upsampled bilinearly."""
    from .frames import resize_bilinear
    gh, gw = max(2, h // cell), max(2, w // cell)
    coarse = rng.uniform(lo, hi, (gh, gw, 3))
    coarse += rng.uniform(-10, 10, (gh, gw, 1))  # correlated across channels
    return resize_bilinear(coarse, h, w)


def _patch_texture(rng, ph, pw):
    """Bright ring plus an oriented interior gradient and faint checker.

    The ring marks the target's extent and the gradient its interior
    position, so crops at the wrong scale or offset look unlike the target
    (a plain repeating texture would be scale-ambiguous).
    """
    c_border = rng.uniform(180, 255, 3)
    c_a = rng.uniform(120, 255, 3)
    c_b = rng.uniform(0, 90, 3)
    yy, xx = np.meshgrid(np.arange(ph), np.arange(pw), indexing="ij")
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx / pw + np.sin(angle) * yy / ph + 1.0) / 2.0
    tex = ramp[:, :, None] * c_a + (1 - ramp[:, :, None]) * c_b
    cell = int(rng.integers(3, 6))
    tex += (((yy // cell + xx // cell) % 2)[:, :, None] - 0.5) * 40.0
    ring = max(2, min(ph, pw) // 10)
    mask = np.zeros((ph, pw), dtype=bool)
    mask[:ring] = mask[-ring:] = True
    mask[:, :ring] = mask[:, -ring:] = True
    tex[mask] = c_border
    tex += rng.uniform(-10, 10, (ph, pw, 3))
    return np.clip(tex, 0, 255)


def make_synthetic_video(rng, n_frames=30, size=(120, 160), patch_size=36,
                         motion=2.0, noise=6.0, occlude_frames=(),
                         name="video"):
    """One deterministic video: a textured patch bouncing over structured
    noise, with exact ground truth. Frames in occlude_frames hide the patch
    (the ground-truth box keeps moving)."""
    h, w = size
    if min(h, w) < TRUNK_MIN_INPUT:
        raise ValueError(f"frame size {size} below the conv trunk minimum "
                         f"{TRUNK_MIN_INPUT}")
    ph = pw = int(patch_size)
    background = _smooth_background(rng, h, w)
    texture = _patch_texture(rng, ph, pw)
    x = float(rng.uniform(2, w - pw - 2))
    y = float(rng.uniform(2, h - ph - 2))
    angle = float(rng.uniform(0, 2 * np.pi))
    vx, vy = motion * np.cos(angle), motion * np.sin(angle)
    frames, boxes = [], []
    for t in range(n_frames):
        xi, yi = int(round(x)), int(round(y))
        img = background + rng.normal(0.0, noise, (h, w, 3))
        if t not in occlude_frames:
            img[yi:yi + ph, xi:xi + pw] = texture
        frames.append(np.clip(img, 0, 255).astype(np.uint8))
        boxes.append([float(xi), float(yi), float(pw), float(ph)])
        x += vx
        y += vy
        if x < 1 or x > w - pw - 1:
            vx = -vx
            x += 2 * vx
        if y < 1 or y > h - ph - 1:
            vy = -vy
            y += 2 * vy
    return Video(frames, np.array(boxes), name=name)


def make_synthetic_dataset(n_videos, n_frames=30, size=(120, 160),
                           patch_size=36, motion=2.0, noise=6.0, seed=0):
    """n_videos deterministic domains, each with its own patch texture."""
    rng = np.random.default_rng(seed)
    return [make_synthetic_video(rng, n_frames, size, patch_size, motion,
                                 noise, name=f"synthetic{i}")
            for i in range(n_videos)]


# ---- offline training --------------------------------------------------------


def train_offline(videos, net, cfg, iter_callback=None):
    """Train the shared layers and one head branch per video.

    Returns the per-iteration loss trace. Frames with no extractable
    positives are skipped with a warning; a video with no usable frame at
    all is an error.
    """
    k = len(videos)
    if net.spec.head_branches != k:
        raise ValueError(f"network has {net.spec.head_branches} head branches "
                         f"but {k} training videos were given")
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(cfg.lr, cfg.weight_decay, cfg.momentum)
    stride = net.spec.feature_stride()
    working = cfg.working_size if cfg.working_size else None
    losses = []
    for it in range(cfg.iterations):
        domain = it % k
        video = videos[domain]
        batch = None
        for _ in range(len(video.frames)):
            fidx = int(rng.integers(len(video.frames)))
            tensor, scale = preprocess_frame(video.frames[fidx], working)
            gt = video.boxes[fidx] * scale
            frame_hw = tensor.shape[1:]
            pos, neg = draw_labeled_samples(
                gt, cfg.batch_pos, cfg.batch_neg, frame_hw, rng,
                pos_trans=cfg.pos_trans, pos_scale_std=cfg.pos_scale_std,
                neg_trans=cfg.neg_trans, neg_scale_std=cfg.neg_scale_std,
                t1=cfg.t1, t2=cfg.t2)
            if len(pos) == 0:
                warnings.warn(f"{video.name}: frame {fidx} yields no positive "
                              f"samples, skipped")
                continue
            batch = (tensor, pos, neg)
            break
        if batch is None:
            raise RuntimeError(f"{video.name}: no frame yields positive samples")
        tensor, pos, neg = batch
        boxes = np.vstack([pos, neg])
        labels = np.concatenate([np.ones(len(pos), dtype=np.intp),
                                 np.zeros(len(neg), dtype=np.intp)])
        featmap = net.forward_shared(tensor)
        rois = map_boxes_to_rois(boxes, stride, featmap.shape[1:])
        logits = net.score_rois(featmap, rois, branch=domain, mode="train",
                                rng=rng)
        loss, grad = softmax_cross_entropy(logits, labels)
        net.backward_scores(grad, into_trunk=cfg.train_trunk)
        params = net.fc_trunk_params() + net.branch_params(domain)
        if cfg.train_trunk:
            params += net.trunk_params()
        opt.step(params)
        losses.append(loss)
        if iter_callback is not None:
            iter_callback(net, it, domain, loss)
    return losses
