import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsenet import numeric as nm
from fsenet.losses import LossWeights, base_loss, focal_align, total_loss


def test_base_loss_examples():
    ones = np.ones((4, 2))
    assert base_loss(ones, ones).item() == pytest.approx(0.0, abs=1e-15)
    y = np.random.default_rng(0).uniform(size=(5, 3))
    target = np.zeros((5, 3))
    target[:, 2] = 1.0
    assert base_loss(y, target).item() == 0.0
    half = np.full((6, 2), 0.5)
    assert base_loss(half, half).item() == pytest.approx(0.34657, abs=1e-5)


def test_base_loss_ignores_background_column():
    y = np.array([[0.2, 0.9], [0.4, 0.1]])
    t = np.array([[1.0, 0.0], [0.0, 1.0]])
    y2 = y.copy()
    y2[:, 1] = 0.5
    assert base_loss(y, t).item() == base_loss(y2, t).item() == pytest.approx(-0.5 * np.log(0.3))


def test_focal_examples():
    assert focal_align(np.ones((1, 1)), np.ones((1, 1))).item() == pytest.approx(0.0, abs=1e-12)
    assert focal_align(np.full((1, 1), 0.5), np.ones((1, 1)), gamma=0).item() == pytest.approx(0.69315, abs=1e-5)
    assert focal_align(np.full((1, 1), 0.9), np.ones((1, 1)), gamma=2).item() == pytest.approx(0.0010536, abs=1e-7)


def test_focal_sums_columns_and_averages_frames():
    p = np.array([[0.9, 0.2], [0.6, 0.7]])
    q = np.array([[1.0, 0.0], [0.5, 0.5]])
    ref = 0.0
    for pt, qt in zip(p, q):
        ref += -sum((1 - a) ** 2 * np.log(a) * b + a ** 2 * np.log(1 - a) * (1 - b) for a, b in zip(pt, qt))
    assert focal_align(p, q).item() == pytest.approx(ref / 2, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(2, 4), st.integers(0, 2**31 - 1))
def test_focal_hard_targets_vanish_and_nonnegative(T, K, seed):
    rng = np.random.default_rng(seed)
    hard = (rng.uniform(size=(T, K)) > 0.5).astype(float)
    assert focal_align(hard, hard).item() == pytest.approx(0.0, abs=1e-6)
    assert focal_align(rng.uniform(size=(T, K)), rng.uniform(size=(T, K))).item() >= 0.0


def test_focal_shape_mismatch():
    with pytest.raises(nm.ShapeError):
        focal_align(np.ones((2, 3)), np.ones((3, 2)))


def test_total_loss_examples():
    w = LossWeights()
    assert total_loss(0.0, 0.0, 0.0, 0.0, w).item() == 0.0
    assert total_loss(1.0, 2.0, 3.0, 4.0, w).item() == pytest.approx(6.2, abs=1e-12)
    assert total_loss(1.0, 2.0, 3.0, 4.0, LossWeights(lambda1=0, lambda2=0)).item() == 1.0
    assert total_loss(1.0, 2.0, 3.0, 4.0, LossWeights(frame_glo=False)).item() == pytest.approx(3.2)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda2=-0.1)


def test_loss_gradients():
    rng = np.random.default_rng(4)
    logits = nm.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    target = rng.uniform(size=(5, 3))
    for gamma in (0.0, 2.0):
        err = nm.grad_check(lambda: focal_align(nm.sigmoid(logits), target, gamma), [logits], eps=1e-6)
        assert err < 1e-6
    assert nm.grad_check(lambda: base_loss(nm.sigmoid(logits), target), [logits], eps=1e-6) < 1e-6
