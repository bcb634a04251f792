"""Command-line interface.

Subcommands: train (multi-domain offline training), track (run a sequence),
eval (OPE metrics from a result file), gradcheck (finite-difference suite),
bench (shared-map vs per-crop convolution cost).

Exit codes: 0 success, 1 verification failure, 2 usage error (bad arguments,
missing files), 3 data error (malformed ground truth, images, configs,
checkpoints).
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import apply_overrides, parse_config_file
from .evaluation import RunSummary, compare_runs, curves_text, evaluate_ope
from .frames import preprocess_frame, resize_bilinear
from .gradcheck import TOLERANCE, run_all
from .imageio import (DataError, SequenceDir, read_result_file,
                      write_result_file)
from .network import (CheckpointError, Network, load_checkpoint, make_spec,
                      reinit_fc_stack, save_checkpoint)
from .roi import map_boxes_to_rois
from .sampling import draw_candidates
from .tracking import TrackConfig, TrackerState, init_first_frame, track_frame
from .training import TrainConfig, Video, train_offline

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_DATA = 3


def _load_pairs(config_path):
    return parse_config_file(config_path) if config_path else {}


def _sequence_video(seq_dir):
    seq = SequenceDir(seq_dir)
    return Video(seq.frames(), seq.boxes, name=Path(seq_dir).name), seq


# ---- train -------------------------------------------------------------------


def cmd_train(args):
    pairs = _load_pairs(args.config)
    cfg, extras = apply_overrides(TrainConfig, pairs,
                                  extra_keys=("variant", "roi"))
    if args.seed is not None:
        cfg.seed = args.seed
    variant = extras.get("variant", "default")
    roi_kind = extras.get("roi", "align")
    videos = []
    for d in args.data:
        video, _ = _sequence_video(d)
        if len(video.boxes) < len(video.frames):
            raise DataError(f"{d}: training needs ground truth on every frame "
                            f"({len(video.boxes)} boxes, {len(video.frames)} "
                            f"frames)")
        videos.append(video)
    spec = make_spec(variant, k=len(videos), roi_kind=roi_kind)
    net = Network(spec, seed=cfg.seed)
    losses = train_offline(videos, net, cfg)
    save_checkpoint(net, args.out)
    trace_path = Path(str(args.out) + ".loss.txt")
    trace_path.write_text("".join(f"{l:.6f}\n" for l in losses))
    print(f"trained {len(videos)} domains for {cfg.iterations} iterations")
    if losses:
        print(f"loss first={losses[0]:.4f} last={losses[-1]:.4f} "
              f"min={min(losses):.4f}")
    print(f"checkpoint written to {args.out}")
    print(f"loss trace written to {trace_path}")
    return EXIT_OK


# ---- track -------------------------------------------------------------------


def _build_tracking_network(ckpt, variant, roi_kind, seed):
    if str(ckpt).lower() == "none":
        net = Network(make_spec(variant, k=1, roi_kind=roi_kind), seed=seed)
    else:
        net = load_checkpoint(ckpt)
        reference = make_spec(variant, k=net.spec.head_branches)
        if [c.kind for c in net.spec.trunk] != [c.kind for c in reference.trunk] \
                or [c.params for c in net.spec.trunk] != [c.params for c in reference.trunk] \
                or [c.params for c in net.spec.fc_trunk] != [c.params for c in reference.fc_trunk]:
            raise CheckpointError(f"{ckpt}: checkpoint architecture does not "
                                  f"match variant '{variant}'")
        net.spec.roi_kind = roi_kind
    if variant == "notrain":
        reinit_fc_stack(net, np.random.default_rng(seed))
    return net


def cmd_track(args):
    pairs = _load_pairs(args.config)
    cfg, _ = apply_overrides(TrackConfig, pairs)
    if args.policy:
        cfg.policy = args.policy
    video, _ = _sequence_video(args.seq)
    roi_kind = args.roi or "align"
    net = _build_tracking_network(args.ckpt, args.variant, roi_kind, cfg.seed)
    state = TrackerState(net, cfg)
    init_first_frame(state, video.frames[0], video.boxes[0])
    for frame in video.frames[1:]:
        track_frame(state, frame)
    boxes = np.array([r.box for r in state.results])
    scores = [r.score for r in state.results]
    iterations = [r.iterations_used for r in state.results]
    write_result_file(args.out, boxes, scores, iterations)
    log_path = Path(str(args.out) + ".log")
    with open(log_path, "w") as fh:
        fh.write(f"# sequence {args.seq}\n")
        fh.write(f"# variant {args.variant} roi {roi_kind} policy {cfg.policy}\n")
        fh.write(f"# init_iterations {state.init_iterations}\n")
        for i, r in enumerate(state.results, start=1):
            losses = ",".join(f"{l:.6f}" for l in r.losses)
            fh.write(f"frame={i} score={r.score:.6f} updated={int(r.updated)} "
                     f"iterations={r.iterations_used} losses={losses}\n")
        total = sum(r.iterations_used for r in state.results)
        fh.write(f"# total_update_iterations {total}\n")
        fh.write(f"# conv_passes {net.conv_passes}\n")
        fh.write(f"# trunk_fingerprint {net.trunk_fingerprint()}\n")
    frozen = net.trunk_fingerprint() == state.trunk_fingerprint
    print(f"tracked {len(video.frames)} frames, "
          f"{sum(r.updated for r in state.results)} updates, "
          f"{sum(r.iterations_used for r in state.results)} update iterations")
    print(f"conv passes: {net.conv_passes} (one per frame)")
    print(f"conv trunk frozen: {'yes' if frozen else 'NO'}")
    print(f"results written to {args.out}")
    print(f"log written to {log_path}")
    return EXIT_OK


# ---- eval --------------------------------------------------------------------


def cmd_eval(args):
    pred = read_result_file(args.pred)
    seq = SequenceDir(args.seq)
    gt = seq.boxes
    if len(pred) != len(gt):
        raise DataError(f"{args.pred} has {len(pred)} boxes but "
                        f"{args.seq} has {len(gt)} ground-truth boxes")
    result = evaluate_ope(pred, gt)
    Path(args.out).write_text(curves_text(result))
    print(f"precision@20px {result.precision_at_20:.4f}")
    print(f"success AUC    {result.auc:.4f}")
    print(f"mean overlap   {result.overlaps.mean():.4f}")
    print(f"curves written to {args.out}")
    return EXIT_OK


# ---- gradcheck -----------------------------------------------------------------


def cmd_gradcheck(args):
    results, ok = run_all(seed=args.seed, instances=args.instances)
    for name, err in results.items():
        status = "ok" if err < TOLERANCE else "FAIL"
        print(f"{name:<14} worst_rel_err={err:.3e}  {status}")
    print(f"gradcheck {'passed' if ok else 'FAILED'} "
          f"(tolerance {TOLERANCE:g}, {args.instances} instances/component)")
    return EXIT_OK if ok else EXIT_VERIFY


# ---- bench -------------------------------------------------------------------

CROP_INPUT_SIZE = 75  # shorter side of each per-candidate crop


def _score_by_crops(net, frame, candidates, context=1.5):
    """MDNet-style per-candidate scoring: one conv pass per crop."""
    h, w = frame.shape[:2]
    stride = net.spec.feature_stride()
    scores = np.zeros(len(candidates))
    for i, (bx, by, bw, bh) in enumerate(candidates):
        cx, cy = bx + bw / 2.0, by + bh / 2.0
        half_w, half_h = bw * context / 2.0, bh * context / 2.0
        x1 = int(np.clip(cx - half_w, 0, w - 2))
        y1 = int(np.clip(cy - half_h, 0, h - 2))
        x2 = int(np.clip(cx + half_w, x1 + 2, w))
        y2 = int(np.clip(cy + half_h, y1 + 2, h))
        crop = frame[y1:y2, x1:x2]
        scale = CROP_INPUT_SIZE / min(crop.shape[:2])
        resized = resize_bilinear(
            crop.astype(np.float32),
            max(CROP_INPUT_SIZE, int(round(crop.shape[0] * scale))),
            max(CROP_INPUT_SIZE, int(round(crop.shape[1] * scale))))
        tensor, _ = preprocess_frame(resized)
        fm = net.forward_shared(tensor)
        box = np.array([[(bx - x1) * scale, (by - y1) * scale,
                         bw * scale, bh * scale]])
        rois = map_boxes_to_rois(box, stride, fm.shape[1:])
        logits = net.score_rois(fm, rois, mode="infer")
        scores[i] = logits[0, 1] - logits[0, 0]
    return scores


def cmd_bench(args):
    pairs = _load_pairs(args.config)
    cfg, _ = apply_overrides(TrackConfig, pairs)
    video, _ = _sequence_video(args.seq)
    frames = video.frames[:args.frames]
    candidates_n = min(cfg.candidates, args.candidates)
    net = load_checkpoint(args.ckpt)
    net.swap_head(1, rng=np.random.default_rng(cfg.seed))
    rng = np.random.default_rng(cfg.seed)
    prev = video.boxes[0]
    per_frame_candidates = [
        draw_candidates(prev, candidates_n, cfg.trans_std, cfg.scale_std, rng,
                        frame_hw=frames[0].shape[:2])
        for _ in frames]

    net.conv_passes = 0
    t0 = time.perf_counter()
    for frame, cands in zip(frames, per_frame_candidates):
        tensor, scale = preprocess_frame(frame, cfg.working_size or None)
        fm = net.forward_shared(tensor)
        rois = map_boxes_to_rois(cands * scale, net.spec.feature_stride(),
                                 fm.shape[1:])
        net.score_rois(fm, rois, mode="infer")
    shared_time = time.perf_counter() - t0
    shared_passes = net.conv_passes

    net.conv_passes = 0
    t0 = time.perf_counter()
    for frame, cands in zip(frames, per_frame_candidates):
        _score_by_crops(net, frame, cands)
    crop_time = time.perf_counter() - t0
    crop_passes = net.conv_passes

    n = len(frames)
    print(f"frames {n}")
    print(f"candidates {candidates_n}")
    print(f"shared_conv_passes {shared_passes}")
    print(f"shared_conv_passes_per_frame {shared_passes / n:.2f}")
    print(f"shared_time_s {shared_time:.6f}")
    print(f"crop_conv_passes {crop_passes}")
    print(f"crop_conv_passes_per_frame {crop_passes / n:.2f}")
    print(f"crop_time_s {crop_time:.6f}")
    print(f"speedup {crop_time / max(shared_time, 1e-9):.2f}")
    return EXIT_OK


# ---- argument plumbing ----------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dyntrack",
        description="tracking-by-detection on a shared convolutional feature map")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="multi-domain offline training")
    p.add_argument("--data", nargs="+", required=True,
                   help="sequence directories, one domain each")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="track one sequence")
    p.add_argument("--ckpt", required=True,
                   help="checkpoint path, or 'none' for random conv weights")
    p.add_argument("--seq", required=True, help="sequence directory")
    p.add_argument("--out", required=True, help="result file path")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--roi", choices=("align", "pool"))
    p.add_argument("--policy", choices=("dynamic", "fixed10"))
    p.add_argument("--variant", choices=("default", "conv5", "fc2", "notrain"),
                   default="default")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="OPE metrics for a result file")
    p.add_argument("--pred", required=True, help="result file")
    p.add_argument("--seq", required=True, help="sequence directory (ground truth)")
    p.add_argument("--out", required=True, help="curve/summary output file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="shared-map vs per-crop convolution cost")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--candidates", type=int, default=16)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
