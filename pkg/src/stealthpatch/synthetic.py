"""Procedural indoor-like scenes and natural base images for desk-scale runs."""
from __future__ import annotations

from typing import List, Tuple

import numpy as np
from scipy import ndimage

from .patch_core import PATCH_SIZE, Scene


def _smooth_texture(rng, shape, sigma, amplitude):
    field = ndimage.gaussian_filter(rng.standard_normal(shape), sigma)
    field /= field.std() + 1e-12
    return amplitude * field


def synthetic_scene(size: Tuple[int, int], rng: np.random.Generator, identifier: str = "") -> Scene:
    """A room: back wall, floor receding to a horizon, and a few boxes.

    Depth is in metre-like units: the floor ramps from near at the bottom edge
    to the wall distance at the horizon, boxes sit in front of the wall.
    """
    H, W = size
    rows = np.arange(H)[:, None] + np.zeros((1, W))
    horizon = int(rng.uniform(0.35, 0.55) * H)
    wall_depth = rng.uniform(5.0, 8.0)
    near = rng.uniform(0.8, 1.5)

    depth = np.full((H, W), wall_depth)
    t = np.clip((rows - horizon) / max(H - 1 - horizon, 1), 0.0, 1.0)
    floor = rows >= horizon
    depth[floor] = (1.0 / (t / near + (1 - t) / wall_depth))[floor]

    wall_color = rng.uniform(0.45, 0.8, size=3)
    floor_color = rng.uniform(0.25, 0.55, size=3)
    image = np.empty((H, W, 3))
    image[:] = wall_color
    shade = 0.6 + 0.4 * t  # floor brightens toward the camera
    image[floor] = (floor_color[None, :] * shade[floor][:, None])

    for _ in range(int(rng.integers(2, 5))):
        bh = int(rng.uniform(0.12, 0.3) * H)
        bw = int(rng.uniform(0.1, 0.3) * W)
        bottom = int(rng.uniform(horizon + 0.1 * H, H))
        top = max(bottom - bh, 0)
        left = int(rng.uniform(0, W - bw))
        tb = np.clip((bottom - horizon) / max(H - 1 - horizon, 1), 0.0, 1.0)
        box_depth = 1.0 / (tb / near + (1 - tb) / wall_depth)
        depth[top:bottom, left:left + bw] = np.minimum(depth[top:bottom, left:left + bw], box_depth)
        color = rng.uniform(0.15, 0.9, size=3)
        image[top:bottom, left:left + bw] = color * (0.7 + 0.3 * tb)

    image += _smooth_texture(rng, (H, W, 3), (1.5, 1.5, 0), 0.03)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return Scene(image, depth.astype(np.float32), identifier)


def synthetic_scenes(n: int, size: Tuple[int, int] = (128, 128), seed: int = 0) -> List[Scene]:
    rng = np.random.default_rng(seed)
    return [synthetic_scene(size, rng, identifier=f"synthetic-{seed}-{i:03d}") for i in range(n)]


def natural_image(name: str = "chelsea", size: int = PATCH_SIZE) -> np.ndarray:
    """A bundled photograph, centre-cropped and resized to ``size x size`` in ``[0, 1]``."""
    from PIL import Image
    from skimage import data

    img = getattr(data, name)()
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    h, w = img.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    crop = Image.fromarray(img[top:top + s, left:left + s, :3])
    return np.asarray(crop.resize((size, size), Image.BICUBIC), dtype=np.float32) / 255.0
