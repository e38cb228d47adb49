import numpy as np
import pytest
import torch

from stealthpatch.baselines import PixelAttackConfig, depth_loss_fn, fgsm, mi_fgsm, random_patch
from stealthpatch.errors import EmptyMask
from stealthpatch.models import DepthModel


class Identity(DepthModel):
    """Depth equals the red channel, so gradients are easy to reason about."""

    def forward(self, images):
        return images[..., 0]


def linear_loss(weights):
    w = torch.as_tensor(weights)
    return lambda depth: (depth * w.to(depth.dtype)).sum()


@pytest.fixture
def image():
    return np.random.default_rng(0).uniform(0.2, 0.8, (16, 16, 3)).astype(np.float32)


def test_config_invariants():
    c = PixelAttackConfig()
    assert (c.epsilon, c.step_alpha, c.steps, c.decay_mu) == (8 / 255, 2 / 255, 10, 1.0)
    with pytest.raises(ValueError):
        PixelAttackConfig(epsilon=1 / 255, step_alpha=2 / 255)
    with pytest.raises(ValueError):
        PixelAttackConfig(steps=0)


def test_zero_gradient_is_identity(image):
    out = fgsm(Identity((16, 16)), image, lambda d: torch.tensor(1.0), 8 / 255)
    assert np.array_equal(out, image)


def test_positive_gradient_decreases_every_pixel(image):
    out = fgsm(Identity((16, 16)), image, linear_loss(np.ones((16, 16))), 8 / 255)
    np.testing.assert_allclose(out[..., 0], image[..., 0] - 8 / 255, atol=1e-6)
    np.testing.assert_array_equal(out[..., 1:], image[..., 1:])


def test_fgsm_clamps(image):
    dark = np.zeros_like(image)
    assert np.all(fgsm(Identity((16, 16)), dark, linear_loss(np.ones((16, 16))), 8 / 255) == 0)


def test_zero_epsilon(image):
    assert np.array_equal(fgsm(Identity((16, 16)), image, linear_loss(np.ones((16, 16))), 0.0), image)


def test_fgsm_step_is_plus_minus_epsilon(toy):
    x = np.random.default_rng(1).uniform(0.1, 0.9, (128, 128, 3)).astype(np.float32)
    mask = np.zeros((128, 128))
    mask[50:70, 50:70] = 1
    out = fgsm(toy, x, depth_loss_fn(toy.predict(x), mask), 8 / 255)
    step = np.abs(out.astype(np.float64) - x)
    assert np.all((step < 1e-6) | (np.abs(step - 8 / 255) < 1e-6))


def test_mi_fgsm_one_step_equals_fgsm(toy):
    x = np.random.default_rng(2).uniform(size=(128, 128, 3)).astype(np.float32)
    mask = np.ones((128, 128))
    loss = depth_loss_fn(toy.predict(x), mask)
    eps = 8 / 255
    assert np.array_equal(mi_fgsm(toy, x, loss, PixelAttackConfig(eps, eps, 1, 0.0)), fgsm(toy, x, loss, eps))


def test_constant_gradient_closed_form(image):
    cfg = PixelAttackConfig()
    out = mi_fgsm(Identity((16, 16)), image, linear_loss(np.ones((16, 16))), cfg)
    shift = image[..., 0].astype(np.float64) - out[..., 0]
    # ten steps of 2/255 would be 20/255; the ball caps the displacement at 8/255
    np.testing.assert_allclose(shift, min(10 * cfg.step_alpha, cfg.epsilon), atol=1e-6)
    assert shift.max() <= cfg.epsilon


def test_mi_fgsm_bound_and_weights(toy):
    before = toy.weights_hash()
    rng = np.random.default_rng(3)
    for _ in range(3):
        x = rng.uniform(size=(128, 128, 3)).astype(np.float32)
        out = mi_fgsm(toy, x, depth_loss_fn(toy.predict(x), np.ones((128, 128))))
        assert np.abs(out.astype(np.float64) - x).max() <= 8 / 255
        assert out.min() >= 0 and out.max() <= 1
    assert toy.weights_hash() == before


def test_depth_loss_tie_break():
    loss = depth_loss_fn(np.zeros((2, 2)), np.ones((2, 2)))
    d = torch.zeros(2, 2, requires_grad=True)
    loss(d).backward()
    assert torch.all(d.grad == -0.25)
    with pytest.raises(EmptyMask):
        depth_loss_fn(np.zeros((2, 2)), np.zeros((2, 2)))(torch.zeros(2, 2))


def test_random_patch():
    a, b = random_patch(rng=7), random_patch(rng=7)
    assert a.shape == (256, 256, 3) and np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1
    assert a.mean() == pytest.approx(0.5, abs=0.01)
