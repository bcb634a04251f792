import numpy as np
import pytest

from dyntrack.evaluation import (EvalResult, RunSummary, center_error,
                                 compare_runs, curves_text, evaluate_ope)


def shifted(box, dx=0.0, dy=0.0):
    return [box[0] + dx, box[1] + dy, box[2], box[3]]


class TestCenterError:
    def test_identical_boxes(self):
        assert center_error([5, 5, 10, 10], [5, 5, 10, 10]) == 0.0

    def test_pythagorean_offset(self):
        assert center_error([0, 0, 10, 10], [3, 4, 10, 10]) == pytest.approx(5.0)

    def test_matches_hand_formula_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.uniform(0, 50, 4)
            b = rng.uniform(0, 50, 4)
            expect = np.sqrt(((a[0] + a[2] / 2) - (b[0] + b[2] / 2)) ** 2
                             + ((a[1] + a[3] / 2) - (b[1] + b[3] / 2)) ** 2)
            assert center_error(a, b) == pytest.approx(expect)


class TestEvaluateOpe:
    def test_perfect_tracker_conventions(self):
        gt = np.tile([10.0, 10.0, 20.0, 20.0], (6, 1))
        res = evaluate_ope(gt, gt)
        assert res.precision_at_20 == 1.0
        # the IoU > 1.0 sample is zero under the strict-inequality rule
        assert res.success_curve[-1] == 0.0
        assert res.auc == pytest.approx(20 / 21)

    def test_all_disjoint_gives_zero_auc(self):
        gt = np.tile([0.0, 0.0, 5.0, 5.0], (5, 1))
        pred = np.tile([50.0, 50.0, 5.0, 5.0], (5, 1))
        pred[0] = gt[0]  # frame 1 is given and excluded anyway
        res = evaluate_ope(pred, gt)
        assert res.auc == 0.0
        assert np.all(res.success_curve == 0.0)

    def test_hand_built_four_frame_precision(self):
        # scored frames carry center errors {0, 10, 25, 60}
        gt = np.tile([100.0, 100.0, 30.0, 30.0], (5, 1))
        pred = np.array([gt[0], gt[1], shifted(gt[2], 10.0),
                         shifted(gt[3], 25.0), shifted(gt[4], 60.0)])
        res = evaluate_ope(pred, gt)
        assert np.allclose(sorted(res.center_errors), [0.0, 10.0, 25.0, 60.0])
        assert res.precision_at_20 == 0.5

    def test_frame_one_excluded_from_scoring(self):
        gt = np.tile([10.0, 10.0, 20.0, 20.0], (3, 1))
        pred = gt.copy()
        pred[0] = [500.0, 500.0, 5.0, 5.0]  # terrible frame-1 box: ignored
        res = evaluate_ope(pred, gt)
        assert res.precision_at_20 == 1.0

    def test_curve_monotonicity(self):
        rng = np.random.default_rng(1)
        gt = np.column_stack([rng.uniform(0, 80, 30), rng.uniform(0, 80, 30),
                              rng.uniform(10, 30, 30), rng.uniform(10, 30, 30)])
        pred = gt + rng.normal(0, 8, gt.shape)
        pred[:, 2:] = np.abs(pred[:, 2:]) + 1
        res = evaluate_ope(pred, gt)
        assert np.all(np.diff(res.precision_curve) >= 0)
        assert np.all(np.diff(res.success_curve) <= 0)
        assert np.all((0 <= res.precision_curve) & (res.precision_curve <= 1))
        assert np.all((0 <= res.success_curve) & (res.success_curve <= 1))

    def test_permutation_covariance(self):
        rng = np.random.default_rng(2)
        gt = np.column_stack([rng.uniform(0, 80, 12), rng.uniform(0, 80, 12),
                              rng.uniform(10, 30, 12), rng.uniform(10, 30, 12)])
        pred = gt + rng.normal(0, 5, gt.shape)
        pred[:, 2:] = np.abs(pred[:, 2:]) + 1
        res = evaluate_ope(pred, gt)
        perm = np.concatenate([[0], 1 + rng.permutation(11)])
        res_p = evaluate_ope(pred[perm], gt[perm])
        assert res_p.auc == pytest.approx(res.auc)
        assert res_p.precision_at_20 == pytest.approx(res.precision_at_20)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="frames"):
            evaluate_ope(np.zeros((3, 4)) + 1, np.zeros((4, 4)) + 1)

    def test_curves_text_round_trips_scalars(self):
        gt = np.tile([10.0, 10.0, 20.0, 20.0], (4, 1))
        text = curves_text(evaluate_ope(gt, gt))
        assert "precision_at_20 1.000000" in text
        assert f"auc {20 / 21:.6f}" in text
        assert len([l for l in text.splitlines() if l.startswith("precision ")]) == 51
        assert len([l for l in text.splitlines() if l.startswith("success ")]) == 21


class TestCompareRuns:
    def _result(self, overlaps, errors):
        overlaps = np.asarray(overlaps, dtype=np.float64)
        errors = np.asarray(errors, dtype=np.float64)
        from dyntrack.evaluation import PRECISION_THRESHOLDS, SUCCESS_THRESHOLDS
        precision = np.array([(errors <= t).mean() for t in PRECISION_THRESHOLDS])
        success = np.array([(overlaps > t).mean() for t in SUCCESS_THRESHOLDS])
        return EvalResult(errors, overlaps, precision, success,
                          float(precision[20]), float(success.mean()))

    def test_identical_runs_print_identical_rows(self):
        res = self._result([0.8, 0.7], [3.0, 5.0])
        table = compare_runs([RunSummary("a", res, 1.0, 1.0),
                              RunSummary("b", res, 1.0, 1.0)])
        rows = [line.split(None, 1)[1] for line in table.splitlines()[2:]]
        assert rows[0] == rows[1]

    def test_dominating_run_has_dominating_aggregates(self):
        worse = self._result([0.4, 0.3, 0.5], [15.0, 25.0, 30.0])
        better = self._result([0.7, 0.8, 0.9], [2.0, 4.0, 6.0])
        assert better.auc >= worse.auc
        assert better.precision_at_20 >= worse.precision_at_20
        table = compare_runs([RunSummary("better", better, 0.5),
                              RunSummary("worse", worse, 2.5)])
        assert "better" in table and "worse" in table

    def test_needs_two_runs(self):
        res = self._result([0.5], [10.0])
        with pytest.raises(ValueError, match="two runs"):
            compare_runs([RunSummary("only", res)])
