"""Random physical transformations applied to the patch before it is pasted.

Geometry (scale, rotation, perspective) is folded into one homography and
resampled bilinearly with ``grid_sample``, so the tile is differentiable with
respect to the pattern; shrinking is preceded by area averaging.  Photometric
changes follow the geometry:
``out = clamp(contrast * x + brightness + noise, 0, 1)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DegenerateGeometry

EDGES = ("top", "bottom", "left", "right")


@dataclass(frozen=True)
class TransformRanges:
    """Sampling ranges; defaults are the values used for patch training."""

    noise: float = 0.1
    rotation_deg: float = 20.0
    brightness: float = 0.1
    contrast: Tuple[float, float] = (0.8, 1.2)
    # -0.7 means up to 70% of the tile may be occluded; 1.0 means fully kept.
    crop: Tuple[float, float] = (-0.7, 1.0)
    affine: float = 0.7
    scale: Tuple[float, float] = (0.25, 1.25)

    @property
    def retained_range(self) -> Tuple[float, float]:
        lo, hi = self.crop
        return (1.0 + lo if lo < 0 else lo), min(hi, 1.0)

    @classmethod
    def from_dict(cls, d: dict) -> "TransformRanges":
        kw = {k: (tuple(v) if isinstance(v, (list, tuple)) else float(v)) for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class TransformParams:
    noise_amplitude: float
    noise_seed: int
    rotation_deg: float
    brightness: float
    contrast: float
    crop_retained: float
    crop_edge: int
    affine_strength: float
    # per-corner (dx, dy) in units of the tile half-extent, order TL, TR, BR, BL
    corner_offsets: Tuple[Tuple[float, float], ...] = field(
        default=((0.0, 0.0),) * 4)
    scale: float = 1.0
    rng_seed: int = 0

    @classmethod
    def identity(cls) -> "TransformParams":
        return cls(noise_amplitude=0.0, noise_seed=0, rotation_deg=0.0, brightness=0.0,
                   contrast=1.0, crop_retained=1.0, crop_edge=0, affine_strength=0.0)

    def within(self, ranges: TransformRanges, tol: float = 1e-12) -> bool:
        lo_c, hi_c = ranges.contrast
        lo_s, hi_s = ranges.scale
        lo_r, hi_r = ranges.retained_range
        max_corner = ranges.affine * 0.5
        return (0.0 <= self.noise_amplitude <= ranges.noise + tol
                and abs(self.rotation_deg) <= ranges.rotation_deg + tol
                and abs(self.brightness) <= ranges.brightness + tol
                and lo_c - tol <= self.contrast <= hi_c + tol
                and lo_r - tol <= self.crop_retained <= hi_r + tol
                and lo_s - tol <= self.scale <= hi_s + tol
                and self.crop_edge in range(4)
                and all(math.hypot(dx, dy) <= max_corner + tol for dx, dy in self.corner_offsets))


def sample(rng: np.random.Generator, ranges: TransformRanges = TransformRanges()) -> TransformParams:
    """Draw one set of transformation parameters from ``ranges``."""
    seed = int(rng.integers(0, 2**31 - 1))
    rotation = rng.uniform(-ranges.rotation_deg, ranges.rotation_deg)
    brightness = rng.uniform(-ranges.brightness, ranges.brightness)
    contrast = rng.uniform(*ranges.contrast)
    retained = rng.uniform(*ranges.retained_range)
    edge = int(rng.integers(0, 4))
    # corner displacement magnitude up to affine * (side / 4); side is 2 in half-extent units
    mags = rng.uniform(0.0, ranges.affine * 0.5, size=4)
    angles = rng.uniform(0.0, 2 * math.pi, size=4)
    corners = tuple((float(m * math.cos(a)), float(m * math.sin(a))) for m, a in zip(mags, angles))
    scale = rng.uniform(*ranges.scale)
    return TransformParams(
        noise_amplitude=ranges.noise, noise_seed=seed, rotation_deg=float(rotation),
        brightness=float(brightness), contrast=float(contrast), crop_retained=float(retained),
        crop_edge=edge, affine_strength=ranges.affine, corner_offsets=corners,
        scale=float(scale), rng_seed=seed)


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 matrix mapping the four ``src`` points onto ``dst`` (direct linear solve)."""
    A, b = [], []
    for (x, y), (u, v) in zip(src, dst):
        A.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        A.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.extend([u, v])
    h = np.linalg.solve(np.asarray(A, float), np.asarray(b, float))
    return np.append(h, 1.0).reshape(3, 3)


def output_size(params: TransformParams, target_size: Tuple[int, int]) -> Tuple[int, int]:
    h = int(round(params.scale * target_size[0]))
    w = int(round(params.scale * target_size[1]))
    if h < 1 or w < 1:
        raise DegenerateGeometry(
            f"scale {params.scale:.3f} shrinks {target_size} below one pixel")
    return h, w


def sampling_grid(params: TransformParams, out_hw: Tuple[int, int]) -> np.ndarray:
    """Source coordinates (``grid_sample`` convention) for every output pixel centre."""
    h, w = out_hw
    half = np.array([w / 2.0, h / 2.0])
    src = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float)
    theta = math.radians(params.rotation_deg)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    dst = (src * half) @ rot.T + np.asarray(params.corner_offsets, float) * half
    inv = np.linalg.inv(_homography(src, dst))
    ys = np.arange(h) + 0.5 - h / 2.0
    xs = np.arange(w) + 0.5 - w / 2.0
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X, Y, np.ones_like(X)], axis=-1) @ inv.T
    return pts[..., :2] / pts[..., 2:3]


def crop_mask(params: TransformParams, out_hw: Tuple[int, int]) -> np.ndarray:
    h, w = out_hw
    keep = np.ones((h, w), dtype=bool)
    removed = 1.0 - params.crop_retained
    if removed <= 0:
        return keep
    rows = (np.arange(h) + 0.5) / h
    cols = (np.arange(w) + 0.5) / w
    edge = EDGES[params.crop_edge]
    if edge == "top":
        keep[rows < removed, :] = False
    elif edge == "bottom":
        keep[rows > 1.0 - removed, :] = False
    elif edge == "left":
        keep[:, cols < removed] = False
    else:
        keep[:, cols > 1.0 - removed] = False
    return keep


def noise_field(params: TransformParams, shape, dtype=torch.float32) -> torch.Tensor:
    gen = torch.Generator().manual_seed(params.noise_seed)
    u = torch.rand(shape, generator=gen, dtype=torch.float64)
    return ((2.0 * u - 1.0) * params.noise_amplitude).to(dtype)


def apply(pattern, params: TransformParams, target_size: Tuple[int, int]):
    """Transform ``pattern`` (HxWx3) into a tile of about ``scale * target_size``.

    Returns ``(tile, footprint)``: the tile is ``h x w x 3`` in ``[0, 1]`` and
    the footprint is a binary ``h x w`` tensor marking pixels that still show
    patch content after rotation, perspective and cropping.
    """
    pattern = torch.as_tensor(pattern)
    if not pattern.is_floating_point():
        pattern = pattern.float()
    out_hw = output_size(params, target_size)
    coords = sampling_grid(params, out_hw)
    inside = (np.abs(coords) <= 1.0).all(axis=-1) & crop_mask(params, out_hw)
    if not inside.any():
        raise DegenerateGeometry("transformed tile has no visible pixels")
    grid = torch.as_tensor(coords, dtype=pattern.dtype)[None]
    src = pattern.permute(2, 0, 1)[None]
    # box-filter before shrinking so every pattern pixel reaches the tile (and its gradient)
    ph, pw = src.shape[-2:]
    if out_hw[0] < ph or out_hw[1] < pw:
        src = F.adaptive_avg_pool2d(src, (min(out_hw[0], ph), min(out_hw[1], pw)))
    warped = F.grid_sample(src, grid, mode="bilinear", padding_mode="border",
                           align_corners=False)[0].permute(1, 2, 0)
    out = params.contrast * warped + params.brightness
    if params.noise_amplitude:
        out = out + noise_field(params, tuple(out.shape), pattern.dtype)
    tile = torch.clamp(out, 0.0, 1.0)
    footprint = torch.as_tensor(inside, dtype=pattern.dtype)
    return tile, footprint
