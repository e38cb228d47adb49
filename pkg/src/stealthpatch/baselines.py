"""Pixel-space baselines (FGSM, MI-FGSM) and the random-patch control."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import EmptyMask
from .models import DepthModel
from .patch_core import DepthMap, PatchMask


@dataclass(frozen=True)
class PixelAttackConfig:
    epsilon: float = 8 / 255
    step_alpha: float = 2 / 255
    steps: int = 10
    decay_mu: float = 1.0

    def __post_init__(self):
        if not (self.epsilon >= self.step_alpha > 0):
            raise ValueError("need epsilon >= step_alpha > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def depth_loss_fn(d_clean, mask):
    """The J used by the pixel attacks: untargeted depth loss against ``d_clean``.

    Descending it (the minus sign in both updates) pushes masked depth away
    from the clean prediction.  At the clean image every difference is zero
    and ``|u|`` has no gradient, so the subgradient ``sign(0) = +1`` is used:
    the first step pushes depth farther.
    """
    if isinstance(d_clean, DepthMap):
        d_clean = d_clean.values
    if isinstance(mask, PatchMask):
        mask = mask.values
    d_clean = torch.as_tensor(np.asarray(d_clean))
    mask = np.asarray(mask)

    def loss(depth):
        m = torch.as_tensor(mask, dtype=depth.dtype)
        if float(m.sum()) <= 0:
            raise EmptyMask("mask selects no pixels")
        u = depth - d_clean.to(depth.dtype)
        sign = torch.where(u >= 0, 1.0, -1.0).to(depth.dtype)
        return -(u * sign * m).sum() / m.sum()
    return loss


def _grad(model, x, loss_fn):
    return np.asarray(model.input_gradient(x, loss_fn), dtype=np.float64)


def fgsm(model: DepthModel, image, loss_fn, epsilon: float) -> np.ndarray:
    """One signed step: ``clamp(x - epsilon * sign(grad J), 0, 1)``.

    The float32 result is kept within ``epsilon`` of ``x`` despite rounding.
    """
    x = np.asarray(image, dtype=np.float32)
    if epsilon == 0:
        return x.copy()
    g = _grad(model, x, loss_fn)
    return _project(x - epsilon * np.sign(g), *_ball(x, epsilon))


def _ball(x0: np.ndarray, epsilon: float):
    """float32 bounds whose distance to ``x0`` never exceeds ``epsilon`` after rounding."""
    lo = (x0.astype(np.float64) - epsilon).astype(np.float32)
    hi = (x0.astype(np.float64) + epsilon).astype(np.float32)
    lo = np.where(x0.astype(np.float64) - lo > epsilon, np.nextafter(lo, np.float32(np.inf)), lo)
    hi = np.where(hi - x0.astype(np.float64) > epsilon, np.nextafter(hi, np.float32(-np.inf)), hi)
    return lo, hi


def _project(x, lo, hi) -> np.ndarray:
    x = np.clip(np.clip(x, 0.0, 1.0).astype(np.float32), lo, hi)
    return np.clip(x, np.float32(0), np.float32(1))


def mi_fgsm(model: DepthModel, image, loss_fn, config: PixelAttackConfig = PixelAttackConfig()) -> np.ndarray:
    """Momentum iterative FGSM, projected onto the epsilon ball around ``image``.

    The accumulated gradient adds the L1-normalised current gradient; an
    all-zero gradient is added unnormalised (i.e. nothing).
    """
    x0 = np.asarray(image, dtype=np.float32)
    x = x0.copy()
    g_acc = np.zeros(x0.shape, dtype=np.float64)
    lo, hi = _ball(x0, config.epsilon)
    for _ in range(config.steps):
        grad = _grad(model, x, loss_fn)
        norm = np.abs(grad).sum()
        g_acc = config.decay_mu * g_acc + (grad / norm if norm > 0 else grad)
        x = x - config.step_alpha * np.sign(g_acc)
        x = _project(x, lo, hi)
    return x


def random_patch(shape=(256, 256, 3), rng=None) -> np.ndarray:
    """Uniform ``[0, 1]`` pattern; pass a seed or ``np.random.Generator``."""
    rng = np.random.default_rng(rng)
    return rng.uniform(0.0, 1.0, size=shape).astype(np.float32)
