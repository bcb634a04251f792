import numpy as np
import pytest

from dyntrack.network import Network
from dyntrack.sampling import (BufferEmptyError, SampleBuffer, draw_candidates,
                               draw_labeled_samples, hard_negative_mine, iou,
                               iou_many, label_samples, top_k_by_score)

from reference import iou_raster
from test_network import tiny_spec


class TestIoU:
    def test_identical_boxes(self):
        assert iou((3, 4, 10, 12), (3, 4, 10, 12)) == 1.0

    def test_disjoint_boxes(self):
        assert iou((0, 0, 5, 5), (10, 10, 5, 5)) == 0.0

    def test_hand_arithmetic_case(self):
        # areas 4 + 4, intersection 1 -> union 7
        assert iou((0, 0, 2, 2), (1, 1, 2, 2)) == pytest.approx(1 / 7)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            a = [rng.uniform(0, 50), rng.uniform(0, 50),
                 rng.uniform(1, 30), rng.uniform(1, 30)]
            b = [rng.uniform(0, 50), rng.uniform(0, 50),
                 rng.uniform(1, 30), rng.uniform(1, 30)]
            v = iou(a, b)
            assert v == pytest.approx(iou(b, a))
            assert 0.0 <= v <= 1.0
            assert (v == 1.0) == np.allclose(a, b)

    def test_matches_rasterized_pixel_count(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = rng.integers(0, 20, 2).tolist() + rng.integers(2, 15, 2).tolist()
            b = rng.integers(0, 20, 2).tolist() + rng.integers(2, 15, 2).tolist()
            area = min(a[2] * a[3], b[2] * b[3])
            assert abs(iou(a, b) - iou_raster(a, b)) <= 2.0 / area

    def test_vector_form_matches_scalar(self):
        rng = np.random.default_rng(2)
        ref = [5, 5, 10, 10]
        boxes = np.column_stack([rng.uniform(0, 20, 20), rng.uniform(0, 20, 20),
                                 rng.uniform(1, 15, 20), rng.uniform(1, 15, 20)])
        vec = iou_many(boxes, ref)
        for b, v in zip(boxes, vec):
            assert v == pytest.approx(iou(b, ref))


class TestDrawCandidates:
    def test_zero_noise_collapses_to_prev(self):
        prev = np.array([10.0, 12.0, 20.0, 16.0])
        boxes = draw_candidates(prev, 8, 0.0, 0.0, np.random.default_rng(0),
                                frame_hw=(100, 100))
        assert np.allclose(boxes, prev)

    def test_default_count_and_clipping(self):
        prev = np.array([2.0, 2.0, 30.0, 30.0])
        boxes = draw_candidates(prev, 256, 0.6, 0.5, np.random.default_rng(1),
                                frame_hw=(60, 80))
        assert boxes.shape == (256, 4)
        assert np.all(boxes[:, 0] >= 0) and np.all(boxes[:, 1] >= 0)
        assert np.all(boxes[:, 0] + boxes[:, 2] <= 80)
        assert np.all(boxes[:, 1] + boxes[:, 3] <= 60)
        assert np.all(boxes[:, 2:] > 0)

    def test_fixed_seed_is_reproducible(self):
        prev = np.array([5.0, 5.0, 12.0, 9.0])
        a = draw_candidates(prev, 64, 0.6, 0.5, np.random.default_rng(7))
        b = draw_candidates(prev, 64, 0.6, 0.5, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_needs_at_least_one(self):
        with pytest.raises(ValueError):
            draw_candidates([0, 0, 5, 5], 0, 0.6, 0.5, np.random.default_rng(0))


class TestLabelSamples:
    def test_gt_box_is_positive(self):
        gt = np.array([10.0, 10.0, 20.0, 20.0])
        pos, neg, mid = label_samples(gt[None], gt)
        assert len(pos) == 1 and len(neg) == 0 and len(mid) == 0

    def test_disjoint_box_is_negative(self):
        gt = np.array([10.0, 10.0, 20.0, 20.0])
        pos, neg, mid = label_samples(np.array([[50.0, 50.0, 5.0, 5.0]]), gt)
        assert len(neg) == 1 and len(pos) == 0

    def test_gap_interval_is_discarded(self):
        gt = np.array([0.0, 0.0, 10.0, 10.0])
        box = np.array([[0.0, 0.0, 10.0, 6.0]])  # IoU = 0.6
        assert iou(box[0], gt) == pytest.approx(0.6)
        pos, neg, mid = label_samples(box, gt)
        assert len(mid) == 1 and len(pos) == 0 and len(neg) == 0

    def test_partition_covers_everything_once(self):
        rng = np.random.default_rng(3)
        gt = np.array([20.0, 20.0, 15.0, 15.0])
        boxes = draw_candidates(gt, 200, 0.6, 0.5, rng, frame_hw=(80, 80))
        pos, neg, mid = label_samples(boxes, gt)
        assert len(pos) + len(neg) + len(mid) == 200

    def test_bad_thresholds_rejected(self):
        with pytest.raises(ValueError, match="t1 > t2"):
            label_samples(np.zeros((1, 4)) + 1, [0, 0, 1, 1], t1=0.5, t2=0.5)


class TestDrawLabeledSamples:
    def test_counts_and_label_correctness(self):
        rng = np.random.default_rng(4)
        gt = np.array([30.0, 25.0, 24.0, 20.0])
        pos, neg = draw_labeled_samples(gt, 20, 60, (100, 120), rng)
        assert pos.shape == (20, 4) and neg.shape == (60, 4)
        assert np.all(iou_many(pos, gt) > 0.7)
        assert np.all(iou_many(neg, gt) < 0.5)

    def test_deterministic_for_fixed_seed(self):
        gt = np.array([10.0, 10.0, 16.0, 16.0])
        a = draw_labeled_samples(gt, 10, 30, (80, 80), np.random.default_rng(5))
        b = draw_labeled_samples(gt, 10, 30, (80, 80), np.random.default_rng(5))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestHardNegativeMining:
    def test_top_k_equal_to_pool_is_identity(self):
        scores = np.array([0.3, -0.1, 0.9])
        assert list(top_k_by_score(scores, 3)) == [2, 0, 1]

    def test_decreasing_scores_keep_first_k(self):
        scores = np.array([5.0, 4.0, 3.0, 2.0, 1.0])
        assert list(top_k_by_score(scores, 3)) == [0, 1, 2]

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(6)
        scores = rng.standard_normal(50)
        keep = top_k_by_score(scores, 12)
        expect = sorted(range(50), key=lambda i: -scores[i])[:12]
        assert list(keep) == expect
        assert min(scores[keep]) >= max(np.delete(scores, keep))

    def test_network_mining_agrees_with_direct_scoring(self):
        net = Network(tiny_spec(), seed=0)
        rng = np.random.default_rng(7)
        fm = net.forward_shared(rng.random((3, 40, 40)))
        negatives = draw_candidates([8, 8, 12, 12], 20, 0.8, 0.5, rng,
                                    frame_hw=(40, 40))
        mined = hard_negative_mine(net, fm, negatives, 5)
        from dyntrack.roi import map_boxes_to_rois
        rois = map_boxes_to_rois(negatives, net.spec.feature_stride(),
                                 fm.shape[1:])
        logits = net.score_rois(fm, rois)
        margins = logits[:, 1] - logits[:, 0]
        expect = negatives[np.argsort(-margins, kind="stable")[:5]]
        assert np.array_equal(mined, expect)
        with pytest.raises(ValueError, match="top_k"):
            hard_negative_mine(net, fm, negatives, 21)


class TestSampleBuffer:
    def test_eviction_beyond_capacity(self):
        buf = SampleBuffer(3)
        for fid in range(4):
            buf.push(fid, {"id": fid})
        assert buf.frame_ids() == [1, 2, 3]

    def test_collect_returns_all_batches_in_order(self):
        buf = SampleBuffer(5)
        buf.push(1, "a")
        buf.push(2, "b")
        assert buf.collect() == ["a", "b"]

    def test_collect_on_empty_raises(self):
        with pytest.raises(BufferEmptyError, match="no stored samples"):
            SampleBuffer(2).collect()

    def test_capacity_validated(self):
        with pytest.raises(ValueError):
            SampleBuffer(0)
