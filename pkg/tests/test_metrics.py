import csv
import json

import numpy as np
import numpy.testing as npt
import pytest

import oracles
from ufo.errors import DataError
from ufo.metrics import NUM_THRESHOLDS, evaluate


def test_perfect_prediction_identity_row():
    gt = np.zeros((2, 1, 4, 4))
    gt[:, 0, 1:3, 1:3] = 1.0
    rep = evaluate(gt.copy(), gt, with_curves=False)
    assert rep.mean_precision == 1.0
    assert rep.mean_jaccard == 1.0
    assert rep.mean_mae == 0.0
    assert rep.mean_f_beta == 1.0


def test_disjoint_equal_area_masks_have_zero_jaccard():
    pred = np.zeros((1, 1, 2, 4))
    gt = np.zeros((1, 1, 2, 4))
    pred[0, 0, :, :2] = 1.0
    gt[0, 0, :, 2:] = 1.0
    rep = evaluate(pred, gt, with_curves=False)
    assert rep.mean_jaccard == 0.0


def test_f_measure_hand_value():
    # precision = recall = 0.5 with beta^2 = 0.3 gives F = 0.5
    pred = np.array([1.0, 1.0, 0.0, 0.0]).reshape(1, 1, 1, 4)
    gt = np.array([1.0, 0.0, 1.0, 0.0]).reshape(1, 1, 1, 4)
    rep = evaluate(pred, gt, with_curves=False)
    assert abs(rep.mean_f_beta - 0.5) < 1e-12


def test_mae_complement_symmetry():
    rng = np.random.default_rng(0)
    pred = rng.uniform(size=(3, 1, 8, 8))
    gt = (rng.uniform(size=(3, 1, 8, 8)) > 0.5).astype(float)
    a = evaluate(pred, gt, with_curves=False).mean_mae
    b = evaluate(1.0 - pred, 1.0 - gt, with_curves=False).mean_mae
    assert abs(a - b) < 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_matches_pixel_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    pred = rng.uniform(size=(2, 1, 8, 8))
    gt = (rng.uniform(size=(2, 1, 8, 8)) > 0.6).astype(float)
    rep = evaluate(pred, gt, with_curves=False)
    for i in range(2):
        p, _, j, mae, f = oracles.metrics_loops(pred[i], gt[i])
        assert abs(rep.precision[i] - p) < 1e-6
        assert abs(rep.jaccard[i] - j) < 1e-6
        assert abs(rep.mae[i] - mae) < 1e-6
        assert abs(rep.f_beta[i] - f) < 1e-6


def test_empty_prediction_conventions():
    zeros = np.zeros((1, 1, 2, 2))
    gt_empty = np.zeros((1, 1, 2, 2))
    rep = evaluate(zeros, gt_empty, with_curves=False)
    assert rep.mean_precision == 1.0 and rep.mean_jaccard == 1.0
    gt_full = np.ones((1, 1, 2, 2))
    rep = evaluate(zeros, gt_full, with_curves=False)
    assert rep.mean_precision == 0.0 and rep.mean_jaccard == 0.0


def test_curves_cover_256_thresholds():
    rng = np.random.default_rng(1)
    pred = rng.uniform(size=(2, 1, 8, 8))
    gt = (rng.uniform(size=(2, 1, 8, 8)) > 0.5).astype(float)
    rep = evaluate(pred, gt)
    assert len(rep.pr_curve) == NUM_THRESHOLDS == len(rep.f_curve)
    ts = [t for t, _, _ in rep.pr_curve]
    assert ts[0] == 0.0 and ts[-1] == 1.0
    assert all(0.0 <= v <= 1.0 for _, p, r in rep.pr_curve for v in (p, r))
    # thresholds at the curve endpoints behave sanely: recall falls to 0 at 1.0
    assert rep.pr_curve[-1][2] == 0.0


def test_curve_points_match_loop_oracle_at_spot_thresholds():
    rng = np.random.default_rng(2)
    pred = rng.uniform(size=(2, 1, 8, 8))
    gt = (rng.uniform(size=(2, 1, 8, 8)) > 0.5).astype(float)
    rep = evaluate(pred, gt)
    for k in (0, 51, 128, 255):
        t, p_mean, r_mean = rep.pr_curve[k]
        ps, rs = [], []
        for i in range(2):
            p, r, _, _, _ = oracles.metrics_loops(pred[i], gt[i], threshold=t)
            ps.append(p)
            rs.append(r)
        assert abs(p_mean - np.mean(ps)) < 1e-9
        assert abs(r_mean - np.mean(rs)) < 1e-9


def test_json_and_csv_serialization(tmp_path):
    rng = np.random.default_rng(3)
    pred = rng.uniform(size=(2, 1, 4, 4))
    gt = (rng.uniform(size=(2, 1, 4, 4)) > 0.5).astype(float)
    rep = evaluate(pred, gt)
    jpath = tmp_path / "report.json"
    cpath = tmp_path / "curves.csv"
    rep.save_json(jpath)
    rep.save_curves_csv(cpath)

    doc = json.loads(jpath.read_text())
    assert set(doc) == {"per_image", "mean", "pr_curve", "f_curve"}
    assert set(doc["mean"]) == {"precision", "jaccard", "mae", "f_beta"}
    assert len(doc["pr_curve"]) == NUM_THRESHOLDS

    with open(cpath, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["threshold", "precision", "recall", "f"]
    assert len(rows) == 1 + NUM_THRESHOLDS
    npt.assert_allclose(float(rows[1][1]), rep.pr_curve[0][1], atol=1e-6)


def test_shape_mismatch_rejected():
    with pytest.raises(DataError):
        evaluate(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))
