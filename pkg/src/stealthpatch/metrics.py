"""Attack metrics: masked mean depth error, affected-region ratio, SSIM."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import torch
from scipy import ndimage

from .errors import DimensionMismatch, EmptyMask
from .patch_core import DepthMap, PatchMask

AFFECTED_THRESHOLD = 0.1


def _np(x):
    if isinstance(x, (DepthMap, PatchMask)):
        x = x.values
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def _prepare(d_clean, d_adv, mask):
    a, b, m = _np(d_clean), _np(d_adv), _np(mask)
    if a.shape != b.shape or a.shape != m.shape:
        raise DimensionMismatch(f"shapes {a.shape}, {b.shape}, mask {m.shape} differ")
    total = m.sum()
    if total <= 0:
        raise EmptyMask("mask selects no pixels")
    return np.abs(a - b) * m, m, total


def depth_error(d_clean, d_adv, mask) -> float:
    """Masked mean absolute depth difference."""
    diff, _, total = _prepare(d_clean, d_adv, mask)
    return float(diff.sum() / total)


def affected_ratio(d_clean, d_adv, mask, threshold: float = AFFECTED_THRESHOLD) -> float:
    """Fraction of masked pixels whose depth moved by strictly more than ``threshold``."""
    diff, m, total = _prepare(d_clean, d_adv, mask)
    return float(((diff > threshold) & (m > 0)).sum() / total)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-ax ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x, g):
    # separable Gaussian, keeping only fully supported positions
    r = len(g) // 2
    out = ndimage.correlate1d(x, g, axis=0, mode="constant")[r:x.shape[0] - r]
    return ndimage.correlate1d(out, g, axis=1, mode="constant")[:, r:x.shape[1] - r]


def ssim(pattern_a, pattern_b, data_range: float = 1.0, win_size: int = 11,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM with a Gaussian window, averaged over channels."""
    a, b = _np(pattern_a), _np(pattern_b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < win_size:
        raise DimensionMismatch(f"images smaller than the {win_size}x{win_size} window")
    g = gaussian_window(win_size, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


@dataclass
class AttackReport:
    E_d: float
    R_a: float
    ssim: Optional[float] = None
    patch_scale: Optional[float] = None
    mode: str = "untargeted"
    units: str = "model"
    config: Dict[str, Any] = field(default_factory=dict)
    per_scene: List[Dict[str, Any]] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.R_a <= 1.0:
            raise ValueError(f"R_a must lie in [0, 1], got {self.R_a}")
        if self.E_d < 0:
            raise ValueError(f"E_d must be >= 0, got {self.E_d}")

    def to_dict(self) -> dict:
        return asdict(self)
