import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tumorseg import losses
from tumorseg.gradcheck import numeric_gradient, relative_error
from tumorseg.losses import (LossConfig, LossError, combined_loss, focal_loss,
                             one_hot_labels, soft_dice_loss)


def test_dice_perfect_prediction():
    loss, _ = soft_dice_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    assert abs(loss) < 1e-5


def test_dice_half_half():
    loss, _ = soft_dice_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
    assert loss == pytest.approx(1.0 / 3.0, abs=1e-4)


def test_dice_empty_empty_is_zero():
    loss, grad = soft_dice_loss(np.zeros(4), np.zeros(4))
    assert loss == 0.0
    assert np.allclose(grad, 0.0)


def test_dice_bounds_and_permutation_invariance():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pred = rng.random(30)
        truth = (rng.random(30) > 0.5).astype(float)
        loss, _ = soft_dice_loss(pred, truth)
        assert 0.0 <= loss <= 1.0
        perm = rng.permutation(30)
        loss_p, _ = soft_dice_loss(pred[perm], truth[perm])
        assert loss_p == pytest.approx(loss, rel=1e-12)


def test_dice_multiclass_averages_foreground_only():
    pred = np.zeros((1, 4, 1, 1, 2))
    truth = np.zeros((1, 4, 1, 1, 2))
    # background dead wrong, all tumor classes perfect: loss must be 0
    pred[0, 0] = [[[0.0, 1.0]]]
    truth[0, 0] = [[[1.0, 0.0]]]
    pred[0, 1] = truth[0, 1] = [[[1.0, 0.0]]]
    pred[0, 2] = truth[0, 2] = [[[0.0, 1.0]]]
    loss, grad = soft_dice_loss(pred, truth)
    assert loss == pytest.approx(0.0, abs=1e-4)
    assert np.allclose(grad[:, 0], 0.0)


def test_focal_exact_value():
    # -1 * (1 - 0.5)^2 * ln(0.5) = 0.25 * ln 2
    pred = np.array([0.5])
    truth = np.array([1.0])
    loss, _ = focal_loss(pred, truth, LossConfig(alpha=1.0, gamma=2.0))
    assert loss == pytest.approx(0.25 * np.log(2.0), abs=1e-6)
    assert loss == pytest.approx(0.173287, abs=1e-6)


def test_focal_perfect_prediction_near_zero():
    pred = np.array([1.0])
    truth = np.array([1.0])
    loss, _ = focal_loss(pred, truth)
    assert loss < 1e-10


def test_focal_gamma_zero_is_cross_entropy():
    rng = np.random.default_rng(1)
    pred = np.clip(rng.random(50), 0.05, 0.95)
    truth = (rng.random(50) > 0.5).astype(float)
    loss, _ = focal_loss(pred, truth, LossConfig(alpha=1.0, gamma=0.0))
    pt = np.where(truth > 0.5, pred, 1.0 - pred)
    assert loss == pytest.approx(float(-np.log(pt).mean()), rel=1e-10)


def test_focal_monotone_decreasing_in_pt():
    cfg = LossConfig()
    grid = np.linspace(0.01, 0.99, 99)
    vals = [focal_loss(np.array([p]), np.array([1.0]), cfg)[0] for p in grid]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_focal_nonnegative():
    rng = np.random.default_rng(2)
    for _ in range(20):
        pred = rng.random(20)
        truth = (rng.random(20) > 0.3).astype(float)
        loss, _ = focal_loss(pred, truth)
        assert loss >= 0.0


def test_combined_is_sum_of_parts():
    rng = np.random.default_rng(3)
    pred = rng.random((1, 4, 2, 2, 2))
    pred /= pred.sum(axis=1, keepdims=True)
    truth = one_hot_labels(rng.choice([0, 1, 2, 4], size=(2, 2, 2)),
                           dtype=np.float64)
    cfg = LossConfig()
    total, tg = combined_loss(pred, truth, cfg)
    dice, dg = soft_dice_loss(pred, truth, cfg.epsilon_dice)
    focal, fg = focal_loss(pred, truth, cfg)
    assert total == pytest.approx(dice + focal, rel=1e-12)
    assert np.allclose(tg, dg + fg)


def test_combined_perfect_prediction():
    truth = one_hot_labels(np.array([[[1, 2], [0, 4]]]), dtype=np.float64)
    loss, _ = combined_loss(truth.copy(), truth)
    assert loss == pytest.approx(0.0, abs=1e-4)


def test_shape_mismatch_raises():
    with pytest.raises(LossError, match="shape"):
        soft_dice_loss(np.zeros(3), np.zeros(4))


def test_one_hot_mapping():
    cube = np.array([[[0, 1], [2, 4]]])
    oh = one_hot_labels(cube)
    assert oh.shape == (1, 4, 1, 2, 2)
    assert oh[0, 0, 0, 0, 0] == 1  # label 0 -> channel 0
    assert oh[0, 1, 0, 0, 1] == 1  # label 1 -> channel 1
    assert oh[0, 2, 0, 1, 0] == 1  # label 2 -> channel 2
    assert oh[0, 3, 0, 1, 1] == 1  # label 4 -> channel 3
    assert oh.sum() == 4


def test_one_hot_rejects_label_3():
    with pytest.raises(LossError):
        one_hot_labels(np.array([[[3]]]))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    pred = rng.random((1, 4, 2, 2, 2)) * 0.8 + 0.1
    pred /= pred.sum(axis=1, keepdims=True)
    truth = one_hot_labels(rng.choice([0, 1, 2, 4], size=(2, 2, 2)),
                           dtype=np.float64)
    cfg = LossConfig()
    for fn in (lambda p: soft_dice_loss(p, truth),
               lambda p: focal_loss(p, truth, cfg),
               lambda p: combined_loss(p, truth, cfg)):
        _, analytic = fn(pred)
        numeric = numeric_gradient(lambda p: fn(p)[0], pred.copy())
        assert relative_error(analytic, numeric) < 1e-5
