import numpy as np
import pytest
import torch

from stealthpatch.errors import AdapterNotFound, GradientUnavailable, ShapeError
from stealthpatch.models import (WEIGHTS_ENV, DepthModel, ToyDepthModel, available_adapters,
                                 get_adapter, weights_root)
from stealthpatch.patch_core import apply_patch


@pytest.fixture(scope="module")
def model64():
    return ToyDepthModel(seed=0, dtype=torch.float64)


@pytest.fixture
def image():
    return np.random.default_rng(0).uniform(size=(128, 128, 3)).astype(np.float32)


def test_predict_shape_and_finite(toy, image):
    d = toy.predict(image)
    assert d.values.shape == (128, 128) and np.isfinite(d.values).all()
    assert d.units == "toy-m"


def test_predict_deterministic(toy, image):
    assert np.array_equal(toy.predict(image).values, toy.predict(image).values)


def test_same_seed_same_weights():
    assert ToyDepthModel(seed=3).weights_hash() == ToyDepthModel(seed=3).weights_hash()
    assert ToyDepthModel(seed=3).weights_hash() != ToyDepthModel(seed=4).weights_hash()


def test_construction_leaves_global_rng_alone():
    torch.manual_seed(5)
    expected = torch.rand(3)
    torch.manual_seed(5)
    ToyDepthModel(seed=9)
    assert torch.equal(torch.rand(3), expected)


def test_wrong_shape(toy):
    with pytest.raises(ShapeError):
        toy.predict(np.zeros((64, 64, 3), np.float32))


def finite_difference(model, x, loss, idx, h=1e-3):
    plus, minus = x.copy(), x.copy()
    plus[idx] += h
    minus[idx] -= h
    f = lambda im: float(loss(torch.as_tensor(model.predict(im).values)))
    return (f(plus) - f(minus)) / (2 * h)


def test_mean_depth_gradient(model64):
    x = np.random.default_rng(1).uniform(0.2, 0.8, (128, 128, 3))
    loss = lambda d: d.mean()
    g = model64.input_gradient(x, loss)
    # probe the pixels with the largest influence so the relative error is meaningful
    for idx in np.argsort(np.abs(g).ravel())[-5:]:
        idx = np.unravel_index(idx, g.shape)
        num = finite_difference(model64, x, loss, idx)
        assert abs(g[idx] - num) <= 1e-2 * abs(num)


def test_single_pixel_gradient(model64):
    x = np.random.default_rng(2).uniform(0.2, 0.8, (128, 128, 3))
    loss = lambda d: d[64, 64].sum()
    g = model64.input_gradient(x, loss)
    for idx in [(64, 64, 0), (63, 65, 1), (66, 62, 2)]:
        num = finite_difference(model64, x, loss, idx)
        assert abs(g[idx] - num) <= 1e-2 * abs(num)


def test_constant_loss_gives_zero_gradient(toy, image):
    g = toy.input_gradient(image, lambda d: torch.tensor(3.0))
    assert g.shape == (128, 128, 3) and not g.any()


def test_masked_out_region_has_zero_gradient(toy, image):
    mask = np.zeros((128, 128), np.float32)
    mask[40:60, 40:60] = 1
    tile = np.full_like(image, 0.5)

    class Composite(DepthModel):
        def forward(self, x):
            return toy.forward(apply_patch(torch.as_tensor(image), x[0], mask)[None])

    g = Composite((128, 128)).input_gradient(tile, lambda d: d.mean())
    assert not g[mask == 0].any() and g[mask == 1].any()


def test_gradient_linearity(model64):
    x = np.random.default_rng(3).uniform(size=(128, 128, 3))
    l1 = lambda d: d.mean()
    l2 = lambda d: (d[:30] ** 2).sum()
    a, b = 0.7, -1.3
    combined = model64.input_gradient(x, lambda d: a * l1(d) + b * l2(d))
    separate = a * model64.input_gradient(x, l1) + b * model64.input_gradient(x, l2)
    np.testing.assert_allclose(combined, separate, atol=1e-6)


def test_weights_frozen(toy, image):
    before = toy.weights_hash()
    toy.input_gradient(image, lambda d: d.mean())
    assert toy.weights_hash() == before
    assert not any(p.requires_grad for p in toy.module.parameters())


def test_gradient_unavailable(image):
    class Opaque(DepthModel):
        supports_input_gradients = False

    with pytest.raises(GradientUnavailable):
        Opaque((128, 128)).input_gradient(image, lambda d: d.mean())


def test_registry(monkeypatch):
    assert "toy" in available_adapters()
    assert get_adapter("toy").name == "toy"
    with pytest.raises(AdapterNotFound, match="midas"):
        get_adapter("midas")
    monkeypatch.setenv(WEIGHTS_ENV, "/weights")
    assert weights_root() == "/weights"


def test_warm_up_changes_predictions(image):
    cold, warm = ToyDepthModel(seed=0), ToyDepthModel(seed=0, warmup_steps=3)
    assert cold.weights_hash() != warm.weights_hash()
    assert np.isfinite(warm.predict(image).values).all()
