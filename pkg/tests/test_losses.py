import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from stealthpatch.errors import DimensionMismatch, EmptyMask
from stealthpatch.losses import (LossWeights, targeted_depth_loss, total_loss, tv_loss,
                                 untargeted_depth_loss)
from stealthpatch.patch_core import DepthMap, make_mask


def test_tv_constant_is_zero():
    assert tv_loss(np.full((8, 8, 3), 0.4)).item() == 0.0


def test_tv_hand_value():
    p = np.array([[0.0, 1.0], [0.0, 1.0]])
    assert tv_loss(p, smoothing=0.0).item() == 1.0
    # the smoothing term moves each summand by less than 1e-4
    assert tv_loss(p).item() == pytest.approx(1.0, abs=1e-4)


def test_tv_single_pixel():
    assert tv_loss(np.array([[0.3]])).item() == 0.0


def test_tv_brute_force():
    rng = np.random.default_rng(0)
    p = rng.uniform(size=(7, 9, 3))
    want = 0.0
    for i in range(6):
        for j in range(8):
            for c in range(3):
                dy = p[i + 1, j, c] - p[i, j, c]
                dx = p[i, j + 1, c] - p[i, j, c]
                want += np.sqrt(dy * dy + dx * dx + 1e-8) - 1e-4
    assert tv_loss(p).item() == pytest.approx(want, rel=1e-12)
    assert tv_loss(p, reduction="mean").item() == pytest.approx(want / (6 * 8 * 3), rel=1e-12)


def test_tv_smoothing_changes_terms_little():
    p = np.random.default_rng(1).uniform(size=(8, 8))
    n_terms = 49
    assert abs(tv_loss(p).item() - tv_loss(p, smoothing=0.0).item()) < 1e-4 * n_terms


def test_untargeted_equal_depths():
    d = np.random.default_rng(0).uniform(size=(4, 4))
    assert untargeted_depth_loss(d, d, np.ones((4, 4))).item() == 0.0


def test_untargeted_hand_values():
    clean = np.zeros((2, 2))
    adv = np.array([[1.0, 3.0], [5.0, 7.0]])
    assert untargeted_depth_loss(clean, adv, np.ones((2, 2))).item() == -4.0
    assert untargeted_depth_loss(clean, adv, np.array([[1, 1], [0, 0]])).item() == -2.0


def test_untargeted_accepts_types_and_batches():
    clean = DepthMap(np.zeros((2, 2)))
    adv = DepthMap(np.array([[1.0, 3.0], [5.0, 7.0]]))
    assert untargeted_depth_loss(clean, adv, make_mask(2, 2, (0, 0), (2, 2))).item() == -4.0
    batch = untargeted_depth_loss(torch.zeros(3, 2, 2), torch.ones(3, 2, 2) * torch.arange(3.)[:, None, None],
                                  torch.ones(3, 2, 2))
    assert batch.tolist() == [0.0, -1.0, -2.0]


def test_errors():
    with pytest.raises(EmptyMask):
        untargeted_depth_loss(np.zeros((2, 2)), np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(DimensionMismatch):
        untargeted_depth_loss(np.zeros((2, 2)), np.ones((2, 3)), np.ones((2, 2)))
    with pytest.raises(DimensionMismatch):
        targeted_depth_loss(np.ones((2, 2)), 1.0, np.ones((3, 3)))


def test_targeted_values():
    assert targeted_depth_loss(np.full((2, 2), 3.0), 3.0, np.ones((2, 2))).item() == 0.0
    assert targeted_depth_loss(np.full((2, 2), 2.0), 1.0, np.ones((2, 2))).item() == 1.0
    d = np.full((3, 3), 5.0)
    m = np.zeros((3, 3))
    m[1, 1] = 1
    assert targeted_depth_loss(d, 20.0, m).item() == 15.0


def test_total_loss():
    w = LossWeights()
    assert (w.alpha, w.beta) == (1.0, 0.5)
    assert total_loss(-4.0, 2.0, w) == -3.0
    assert total_loss(-4.0, 2.0, LossWeights(1.0, 0.0)) == -4.0
    assert total_loss(-4.0, 2.0, LossWeights(0.0, 0.0)) == 0.0
    with pytest.raises(ValueError):
        LossWeights(float("inf"), 0.5)
    assert LossWeights(target_depth_c=1.0).targeted and not w.targeted


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_untargeted_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 5, 5))
    m = (rng.uniform(size=(5, 5)) < 0.5).astype(float)
    m[0, 0] = 1
    perm = rng.permutation(25)
    shuffle = lambda x: x.reshape(-1)[perm].reshape(5, 5)
    assert untargeted_depth_loss(a, b, m).item() == pytest.approx(
        untargeted_depth_loss(shuffle(a), shuffle(b), shuffle(m)).item(), rel=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0, 100))
def test_untargeted_scales_linearly(seed, k):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 5, 5))
    m = np.ones((5, 5))
    assert untargeted_depth_loss(k * a, k * b, m).item() == pytest.approx(
        k * untargeted_depth_loss(a, b, m).item(), rel=1e-9, abs=1e-12)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 5), st.floats(0, 5), st.floats(-10, 10))
def test_total_loss_linear(d, t, alpha, beta, extra):
    w = LossWeights(alpha, beta)
    assert total_loss(d + extra, t, w) == pytest.approx(total_loss(d, t, w) + alpha * extra, abs=1e-9)
    assert total_loss(d, t + extra, w) == pytest.approx(total_loss(d, t, w) + beta * extra, abs=1e-9)


def test_tv_gradient_finite_at_constant():
    p = torch.full((4, 4, 3), 0.5, dtype=torch.float64, requires_grad=True)
    tv_loss(p).backward()
    assert torch.isfinite(p.grad).all()
