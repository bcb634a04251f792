"""Tracking-by-detection on a shared convolutional feature map.

A small NCHW CNN engine (exact backprop, no autograd), RoIAlign/RoIPool
feature extraction, multi-domain offline training, and an online tracker
whose fine-tuning iterations stop early once the batch loss falls below a
threshold.
"""

from .bbox_regression import BBoxRegressor, apply_deltas, box_deltas
from .evaluation import (EvalResult, RunSummary, center_error, compare_runs,
                         evaluate_ope)
from .network import (CheckpointError, LayerConfig, Network, NetworkSpec,
                      load_checkpoint, make_spec, save_checkpoint)
from .roi import (bilinear_sample, map_box_to_roi, map_boxes_to_rois,
                  roialign_backward, roialign_forward, roipool_backward,
                  roipool_forward)
from .sampling import (SampleBuffer, draw_candidates, hard_negative_mine, iou,
                       label_samples)
from .tracking import (FrameResult, TrackConfig, TrackerState,
                       fine_tune_online, init_first_frame, run_sequence,
                       run_update_loop, score_of, track_frame)
from .training import (TrainConfig, Video, make_synthetic_dataset,
                       make_synthetic_video, train_offline)

__version__ = "0.1.0"

__all__ = [
    "BBoxRegressor", "apply_deltas", "box_deltas",
    "EvalResult", "RunSummary", "center_error", "compare_runs", "evaluate_ope",
    "CheckpointError", "LayerConfig", "Network", "NetworkSpec",
    "load_checkpoint", "make_spec", "save_checkpoint",
    "bilinear_sample", "map_box_to_roi", "map_boxes_to_rois",
    "roialign_backward", "roialign_forward", "roipool_backward",
    "roipool_forward",
    "SampleBuffer", "draw_candidates", "hard_negative_mine", "iou",
    "label_samples",
    "FrameResult", "TrackConfig", "TrackerState", "fine_tune_online",
    "init_first_frame", "run_sequence", "run_update_loop", "score_of",
    "track_frame",
    "TrainConfig", "Video", "make_synthetic_dataset", "make_synthetic_video",
    "train_offline",
    "__version__",
]
