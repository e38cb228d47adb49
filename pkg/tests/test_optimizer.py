import numpy as np
import pytest
import torch

from stealthpatch.errors import NonFiniteLoss
from stealthpatch.evaluation import draw_placements, evaluate_pattern
from stealthpatch.models import DepthModel, ToyDepthModel
from stealthpatch.optimizer import AttackConfig, LossHistory, initial_perturbation, optimize
from stealthpatch.patch_core import compose_patch
from stealthpatch.synthetic import natural_image, synthetic_scenes


@pytest.fixture(scope="module")
def natural():
    return natural_image()


def test_defaults_match_table():
    c = AttackConfig()
    assert (c.epochs, c.batch, c.learning_rate, c.adam_beta1, c.adam_beta2) == (200, 8, 0.001, 0.9, 0.999)
    assert (c.epsilon, c.alpha, c.beta) == (0.03, 1.0, 0.5)
    assert c.weights.targeted is False
    assert AttackConfig(mode="targeted").weights.target_depth_c == 20.0


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        AttackConfig(mode="sideways")
    with pytest.raises(ValueError):
        AttackConfig(patch_scale=0)
    c = AttackConfig(epochs=3, mode="targeted", target_depth_c=1.0)
    assert AttackConfig.from_dict(c.to_dict()) == c


def test_history_csv_round_trip():
    h = LossHistory([1.0, -0.1234567890123], [0.5, 2e-9], [0.25, 3.0])
    back = LossHistory.from_csv(h.to_csv())
    assert (back.total, back.depth, back.tv) == (h.total, h.depth, h.tv)


def test_zero_learning_rate_keeps_initial_delta(toy, scenes, natural):
    cfg = AttackConfig(epochs=2, batch=2, learning_rate=0.0)
    patch, history = optimize(toy, scenes, natural, cfg)
    assert np.array_equal(patch.perturbation, initial_perturbation(natural, cfg.epsilon, cfg.rng_seed))
    assert len(history) == 4 and len(history.epoch_seconds) == 2


def test_zero_objective_keeps_delta(toy, scenes, natural):
    cfg = AttackConfig(epochs=10, batch=4, alpha=0.0, beta=0.0)
    start = initial_perturbation(natural, cfg.epsilon, cfg.rng_seed)
    patch, history = optimize(toy, scenes, natural, cfg)
    assert len(history) == 10
    assert np.array_equal(patch.perturbation, start)


def test_invariants_after_every_step(toy, scenes, natural):
    seen = []

    def check(i, n, delta):
        seen.append(i)
        assert float(delta.abs().max()) <= 0.03 + 1e-7
        composed = n + delta
        assert float(composed.min()) >= 0 and float(composed.max()) <= 1

    before = toy.weights_hash()
    patch, history = optimize(toy, scenes, natural, AttackConfig(epochs=5, batch=3, learning_rate=0.01),
                              on_step=check)
    assert seen == list(range(10)) and len(history) == 10
    assert patch.is_valid()
    assert toy.weights_hash() == before


def test_short_runs_are_deterministic(toy, scenes, natural):
    cfg = AttackConfig(epochs=3, batch=2, rng_seed=4)
    p1, h1 = optimize(toy, scenes, natural, cfg)
    p2, h2 = optimize(toy, scenes, natural, cfg)
    assert h1.total == h2.total and np.array_equal(p1.perturbation, p2.perturbation)


def test_non_finite_loss_reports_iteration(scenes, natural):
    class Broken(DepthModel):
        def forward(self, images):
            return torch.full(images.shape[:3], float("nan"))

    with pytest.raises(NonFiniteLoss) as err:
        optimize(Broken((128, 128)), scenes, natural, AttackConfig(epochs=1, batch=2))
    assert err.value.iteration == 0


@pytest.mark.slow
def test_untargeted_loss_improves(natural):
    model = ToyDepthModel(seed=0)
    scenes = synthetic_scenes(8, seed=1)
    cfg = AttackConfig(epochs=100, batch=8)
    patch, history = optimize(model, scenes, natural, cfg)
    k = len(history) // 10
    assert np.median(history.depth[-k:]) <= np.median(history.depth[:k])

    placements = draw_placements(scenes, cfg.patch_scale, 4, seed=0)
    start = np.clip(natural + initial_perturbation(natural, cfg.epsilon, cfg.rng_seed), 0, 1)
    before = evaluate_pattern(model, scenes, start, cfg.patch_scale, placements).E_d
    after = evaluate_pattern(model, scenes, compose_patch(patch), cfg.patch_scale, placements).E_d
    assert after > before


@pytest.mark.slow
def test_targeted_mode_moves_toward_target(natural):
    model = ToyDepthModel(seed=0)
    scenes = synthetic_scenes(4, seed=2)
    cfg = AttackConfig(epochs=60, batch=4, mode="targeted", target_depth_c=1.0)
    _, history = optimize(model, scenes, natural, cfg)
    k = len(history) // 10
    assert min(history.depth) >= 0
    assert np.median(history.depth[-k:]) < np.median(history.depth[:k])
