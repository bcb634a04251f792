import numpy as np
import pytest

from dyntrack.bbox_regression import BBoxRegressor, apply_deltas, box_deltas
from dyntrack.sampling import iou, jitter_boxes


def linear_problem(rng, n=80, dim=32):
    """Features that encode the true deltas exactly through a linear map."""
    gt = np.array([40.0, 35.0, 22.0, 18.0])
    boxes = jitter_boxes(gt, n, 0.12, 0.08, rng)
    targets = box_deltas(boxes, gt)
    mix = rng.standard_normal((4, dim))
    offset = rng.standard_normal(dim)
    features = targets @ mix + offset
    return gt, boxes, targets, features


class TestDeltas:
    def test_zero_deltas_are_identity(self):
        boxes = np.array([[3.0, 4.0, 10.0, 12.0]])
        assert np.allclose(apply_deltas(boxes, np.zeros((1, 4))), boxes)

    def test_log2_width_delta_doubles_width(self):
        box = np.array([[10.0, 10.0, 8.0, 6.0]])
        out = apply_deltas(box, np.array([[0.0, 0.0, np.log(2.0), 0.0]]))
        assert out[0, 2] == pytest.approx(16.0)
        # center preserved
        assert out[0, 0] + out[0, 2] / 2 == pytest.approx(14.0)

    def test_round_trip_is_exact(self):
        rng = np.random.default_rng(0)
        gt = np.array([20.0, 25.0, 14.0, 18.0])
        boxes = jitter_boxes(gt, 50, 0.3, 0.3, rng)
        recovered = apply_deltas(boxes, box_deltas(boxes, gt))
        assert np.max(np.abs(recovered - gt)) < 1e-9


class TestFit:
    def test_samples_equal_to_gt_give_identity_prediction(self):
        rng = np.random.default_rng(1)
        gt = np.array([10.0, 10.0, 20.0, 20.0])
        boxes = np.tile(gt, (10, 1))
        features = rng.standard_normal((10, 16))
        reg = BBoxRegressor(ridge_lambda=1e-3).fit(features, boxes, gt)
        refined = reg.refine(features[0], gt)
        assert np.max(np.abs(refined - gt)) < 1e-6

    def test_recovers_planted_linear_shifts(self):
        rng = np.random.default_rng(2)
        gt, boxes, targets, features = linear_problem(rng)
        reg = BBoxRegressor(ridge_lambda=1e-6).fit(features, boxes, gt)
        pred = reg.predict_deltas(features)
        assert np.max(np.abs(pred - targets)) < 1e-3
        refined = apply_deltas(boxes, pred)
        assert np.max(np.abs(refined - gt)) < 1e-3

    def test_large_lambda_shrinks_weights_to_bias_only(self):
        rng = np.random.default_rng(3)
        gt, boxes, targets, features = linear_problem(rng)
        reg = BBoxRegressor(ridge_lambda=1e12).fit(features, boxes, gt)
        assert reg.weight_norm() < 1e-6
        pred = reg.predict_deltas(features)
        assert np.allclose(pred, pred[0])  # bias-only output

    def test_weight_norm_monotone_in_lambda(self):
        rng = np.random.default_rng(4)
        gt, boxes, targets, features = linear_problem(rng)
        norms = [BBoxRegressor(ridge_lambda=lam).fit(features, boxes, gt).weight_norm()
                 for lam in (1e-3, 1.0, 1e3, 1e6)]
        assert all(a >= b for a, b in zip(norms, norms[1:]))

    def test_too_few_qualifying_samples_leaves_unfitted(self):
        rng = np.random.default_rng(5)
        gt = np.array([10.0, 10.0, 10.0, 10.0])
        far = np.tile([60.0, 60.0, 10.0, 10.0], (10, 1))
        reg = BBoxRegressor().fit(rng.standard_normal((10, 8)), far, gt)
        assert not reg.fitted
        box = np.array([5.0, 5.0, 8.0, 8.0])
        assert np.array_equal(reg.refine(rng.standard_normal(8), box), box)

    def test_refinement_improves_held_out_jittered_boxes(self):
        rng = np.random.default_rng(6)
        gt = np.array([40.0, 35.0, 22.0, 18.0])
        train = jitter_boxes(gt, 100, 0.12, 0.08, rng)
        test = jitter_boxes(gt, 40, 0.12, 0.08, rng)
        mix = rng.standard_normal((4, 24))
        reg = BBoxRegressor(ridge_lambda=1e-4).fit(
            box_deltas(train, gt) @ mix, train, gt)
        refined = reg.refine(box_deltas(test, gt) @ mix, test)
        before = np.mean([1 - iou(b, gt) for b in test])
        after = np.mean([1 - iou(b, gt) for b in refined])
        assert after < before

    def test_refine_clips_to_frame(self):
        rng = np.random.default_rng(7)
        gt, boxes, targets, features = linear_problem(rng)
        reg = BBoxRegressor(ridge_lambda=1e-6).fit(features, boxes, gt)
        out = reg.refine(features, boxes, frame_hw=(50, 55))
        assert np.all(out[:, 0] >= 0) and np.all(out[:, 0] + out[:, 2] <= 55)
        assert np.all(out[:, 1] >= 0) and np.all(out[:, 1] + out[:, 3] <= 50)
