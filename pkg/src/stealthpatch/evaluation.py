"""Paste a pattern into scenes under seeded placements and transforms, then score it."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
import torch

from . import transforms as T
from .metrics import affected_ratio, depth_error
from .models import DepthModel
from .optimizer import random_placement, render
from .patch_core import Scene, patch_side_for_scale


@dataclass
class Placement:
    scene_index: int
    params: T.TransformParams
    top_left: tuple


@dataclass
class EvalResult:
    E_d: float
    R_a: float
    per_scene: List[dict]
    placements: List[Placement]


def draw_placements(scenes: Sequence[Scene], patch_scale: float, draws: int, seed: int,
                    ranges: Optional[T.TransformRanges] = T.TransformRanges()) -> List[Placement]:
    """Fixed evaluation draws; ``ranges=None`` pastes the untransformed pattern."""
    rng = np.random.default_rng([seed, 0xE7A1])
    out = []
    for i, scene in enumerate(scenes):
        H, W = scene.size
        side = patch_side_for_scale(H, W, patch_scale)
        for _ in range(draws):
            params = T.sample(rng, ranges) if ranges is not None else T.TransformParams.identity()
            hw = T.output_size(params, (side, side))
            out.append(Placement(i, params, random_placement(rng, (H, W), hw)))
    return out


def adversarial_images(scenes, pattern, placements: Sequence[Placement], patch_scale: float):
    """Yield ``(placement, image, mask)`` for every draw, as numpy arrays."""
    pattern = torch.as_tensor(np.asarray(pattern, dtype=np.float32))
    for pl in placements:
        scene = scenes[pl.scene_index]
        side = patch_side_for_scale(*scene.size, patch_scale)
        with torch.no_grad():
            img, mask = render(torch.as_tensor(scene.image), pattern, pl.params, (side, side),
                               pl.top_left)
        yield pl, img.numpy(), mask.numpy()


def evaluate_pattern(model: DepthModel, scenes: Sequence[Scene], pattern, patch_scale: float,
                     placements: Sequence[Placement],
                     defense: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                     threshold: float = 0.1) -> EvalResult:
    """Mean E_d / R_a over all draws.

    The reference depth is the model's prediction on the untouched scene;
    ``defense`` (if given) preprocesses only the adversarial image.
    """
    clean = [model.predict(s.image).values for s in scenes]
    rows = []
    for pl, img, mask in adversarial_images(scenes, pattern, placements, patch_scale):
        if defense is not None:
            img = defense(img)
        d_adv = model.predict(img).values
        d_clean = clean[pl.scene_index]
        rows.append({"scene": scenes[pl.scene_index].identifier,
                     "E_d": depth_error(d_clean, d_adv, mask),
                     "R_a": affected_ratio(d_clean, d_adv, mask, threshold)})
    return EvalResult(float(np.mean([r["E_d"] for r in rows])),
                      float(np.mean([r["R_a"] for r in rows])), rows, list(placements))
