"""Training objective: total-variation smoothness plus an adversarial depth term."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch

from .errors import DimensionMismatch, EmptyMask
from .patch_core import DepthMap, PatchMask

TV_SMOOTHING = 1e-8


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.5
    target_depth_c: Optional[float] = None  # set => targeted mode

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (v >= 0 and v != float("inf")):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @property
    def targeted(self) -> bool:
        return self.target_depth_c is not None


def _t(x, like=None):
    if isinstance(x, DepthMap):
        x = x.values
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if isinstance(like, torch.Tensor) else torch.float64
    return torch.as_tensor(x, dtype=dtype)


def tv_loss(pattern, smoothing: float = TV_SMOOTHING, reduction: str = "sum"):
    """Isotropic total variation of an ``H x W`` or ``H x W x C`` field.

    Sums ``sqrt(dy**2 + dx**2 + s) - sqrt(s)`` over interior indices
    ``i < H-1, j < W-1`` and over channels.  Subtracting ``sqrt(s)`` keeps a
    constant pattern at exactly zero while the smoothing keeps the gradient
    finite where both differences vanish.  ``reduction="mean"`` divides by the
    number of terms.
    """
    p = _t(pattern)
    if p.dim() == 2:
        p = p[..., None]
    if p.shape[0] < 2 or p.shape[1] < 2:
        return p.new_zeros(())
    dy = p[1:, :-1] - p[:-1, :-1]
    dx = p[:-1, 1:] - p[:-1, :-1]
    terms = torch.sqrt(dy * dy + dx * dx + smoothing) - smoothing ** 0.5
    if reduction == "sum":
        return terms.sum()
    if reduction == "mean":
        return terms.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def _masked(mask, ref, *others):
    m = _t(mask.values if isinstance(mask, PatchMask) else mask, ref)
    for o in others:
        if tuple(o.shape[-2:]) != tuple(m.shape[-2:]):
            raise DimensionMismatch(
                f"depth map {tuple(o.shape)} does not match mask {tuple(m.shape)}")
    count = m.sum(dim=(-2, -1))
    if bool((count <= 0).any()):
        raise EmptyMask("mask selects no pixels")
    return m, count


def untargeted_depth_loss(d_clean, d_adv, mask):
    """Negative masked mean of ``|d_clean - d_adv|``.

    Accepts single ``H x W`` maps or batches ``B x H x W`` (one value per item).
    """
    d_adv = _t(d_adv)
    d_clean = _t(d_clean, d_adv)
    if d_clean.shape != d_adv.shape:
        raise DimensionMismatch(f"depth maps {tuple(d_clean.shape)} and {tuple(d_adv.shape)}")
    m, count = _masked(mask, d_adv, d_clean, d_adv)
    return -(torch.abs(d_clean - d_adv) * m).sum(dim=(-2, -1)) / count


def targeted_depth_loss(d_adv, c: float, mask):
    """Masked mean of ``|d_adv - c|``; zero once the masked depth equals ``c``."""
    d_adv = _t(d_adv)
    m, count = _masked(mask, d_adv, d_adv)
    return (torch.abs(d_adv - c) * m).sum(dim=(-2, -1)) / count


def total_loss(depth_loss, tv, weights: LossWeights):
    return weights.alpha * depth_loss + weights.beta * tv
