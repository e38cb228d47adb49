"""Patch training loop: render under random transforms, step Adam on the perturbation, project."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, List, Optional, Sequence

import numpy as np
import torch

from .errors import NonFiniteLoss
from .losses import LossWeights, targeted_depth_loss, total_loss, tv_loss, untargeted_depth_loss
from .models import DepthModel
from .patch_core import PATCH_SIZE, Patch, Scene, apply_patch, compose, patch_side_for_scale, place_tile
from .projection import constrain
from . import transforms as T


@dataclass
class AttackConfig:
    epochs: int = 200
    batch: int = 8
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epsilon: float = 0.03
    alpha: float = 1.0
    beta: float = 0.5
    mode: str = "untargeted"
    target_depth_c: float = 20.0
    patch_scale: float = 0.01
    rng_seed: int = 0
    tv_reduction: str = "mean"
    transforms: T.TransformRanges = field(default_factory=T.TransformRanges)

    def __post_init__(self):
        if isinstance(self.transforms, dict):
            self.transforms = T.TransformRanges.from_dict(self.transforms)
        if self.mode not in ("targeted", "untargeted"):
            raise ValueError(f"mode must be 'targeted' or 'untargeted', got {self.mode!r}")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be >= 1")
        if self.learning_rate < 0 or self.epsilon < 0:
            raise ValueError("learning_rate and epsilon must be >= 0")
        if not 0 < self.patch_scale <= 1:
            raise ValueError("patch_scale must lie in (0, 1]")

    @property
    def weights(self) -> LossWeights:
        c = self.target_depth_c if self.mode == "targeted" else None
        return LossWeights(self.alpha, self.beta, c)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transforms"] = self.transforms.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class LossHistory:
    total: List[float] = field(default_factory=list)
    depth: List[float] = field(default_factory=list)
    tv: List[float] = field(default_factory=list)
    epoch_seconds: List[float] = field(default_factory=list)

    def __len__(self):
        return len(self.total)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "total", "depth", "tv"])
        for i, row in enumerate(zip(self.total, self.depth, self.tv)):
            w.writerow([i, *(repr(float(v)) for v in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LossHistory":
        hist = cls()
        for row in csv.DictReader(io.StringIO(text)):
            hist.total.append(float(row["total"]))
            hist.depth.append(float(row["depth"]))
            hist.tv.append(float(row["tv"]))
        return hist


def initial_perturbation(natural_base: np.ndarray, epsilon: float, seed: int) -> np.ndarray:
    """Uniform draw in ``[-epsilon, epsilon]``, already folded into the valid range."""
    rng = np.random.default_rng([seed, 0x5EED])
    delta = rng.uniform(-epsilon, epsilon, size=natural_base.shape).astype(np.float32)
    return constrain(natural_base, delta, epsilon).astype(np.float32)


def render(scene_image: torch.Tensor, pattern: torch.Tensor, params: T.TransformParams,
           target_size, top_left):
    """Transform ``pattern``, paste it at ``top_left``; returns ``(image, mask)``."""
    tile, footprint = T.apply(pattern, params, target_size)
    canvas, mask = place_tile(tile, footprint, scene_image.shape[:2], top_left)
    return apply_patch(scene_image, canvas, mask), mask


def random_placement(rng: np.random.Generator, image_size, tile_size):
    H, W = image_size
    h, w = tile_size
    return int(rng.integers(0, H - h + 1)), int(rng.integers(0, W - w + 1))


def depth_objective(mode, d_clean, d_adv, masks, target_c=None):
    """Batch-averaged depth loss (untargeted: negative masked error)."""
    if mode == "targeted":
        return targeted_depth_loss(d_adv, target_c, masks).mean()
    return untargeted_depth_loss(d_clean, d_adv, masks).mean()


def optimize(model: DepthModel, scenes: Sequence[Scene], natural_base, config: AttackConfig,
             on_step: Optional[Callable[[int, torch.Tensor, torch.Tensor], None]] = None,
             initial_delta: Optional[np.ndarray] = None):
    """Train a patch against ``model`` over ``scenes``.

    Each iteration draws, for every scene in the batch, a fresh transform and
    a fresh placement, renders, predicts, and takes one Adam step on the
    perturbation followed by projection onto the epsilon ball and the ``[0, 1]``
    box.  ``on_step(iteration, natural_base, delta)`` is called after every
    projection.  Returns ``(Patch, LossHistory)``.
    """
    if not scenes:
        raise ValueError("optimize needs at least one scene")
    natural_base = np.asarray(natural_base, dtype=np.float32)
    if natural_base.shape != (PATCH_SIZE, PATCH_SIZE, 3):
        raise ValueError(f"natural base must be {PATCH_SIZE}x{PATCH_SIZE}x3")
    dtype = getattr(model, "dtype", torch.float32)
    rng = np.random.default_rng(config.rng_seed)
    weights = config.weights
    ranges = config.transforms

    images = torch.as_tensor(np.stack([s.image for s in scenes]), dtype=dtype)
    H, W = images.shape[1:3]
    with torch.no_grad():
        d_clean = torch.cat([model.forward(images[i:i + config.batch])
                             for i in range(0, len(scenes), config.batch)])
    side = patch_side_for_scale(H, W, config.patch_scale)

    N = torch.as_tensor(natural_base, dtype=dtype)
    if initial_delta is None:
        initial_delta = initial_perturbation(natural_base, config.epsilon, config.rng_seed)
    delta = torch.as_tensor(np.array(initial_delta, dtype=np.float32), dtype=dtype).requires_grad_(True)
    opt = torch.optim.Adam([delta], lr=config.learning_rate,
                           betas=(config.adam_beta1, config.adam_beta2))

    history = LossHistory()
    iteration = 0
    for _ in range(config.epochs):
        started = time.perf_counter()
        order = rng.permutation(len(scenes))
        for start in range(0, len(order), config.batch):
            idx = order[start:start + config.batch]
            pattern = compose(N, delta)
            adv, masks = [], []
            for i in idx:
                params = T.sample(rng, ranges)
                tile_hw = T.output_size(params, (side, side))
                top_left = random_placement(rng, (H, W), tile_hw)
                image, mask = render(images[i], pattern, params, (side, side), top_left)
                adv.append(image)
                masks.append(mask)
            d_adv = model.forward(torch.stack(adv))
            masks = torch.stack(masks)
            depth = depth_objective(config.mode, d_clean[idx], d_adv, masks, weights.target_depth_c)
            tv = tv_loss(pattern, reduction=config.tv_reduction)
            loss = total_loss(depth, tv, weights)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(iteration, loss.item())
            opt.zero_grad()
            loss.backward()
            opt.step()
            with torch.no_grad():
                delta.copy_(constrain(N, delta, config.epsilon))
            history.total.append(loss.item())
            history.depth.append(depth.item())
            history.tv.append(tv.item())
            if on_step is not None:
                on_step(iteration, N, delta.detach())
            iteration += 1
        history.epoch_seconds.append(time.perf_counter() - started)

    patch = Patch(natural_base, delta.detach().cpu().numpy().astype(np.float32), config.epsilon,
                  metadata={"iterations": iteration, "model": getattr(model, "name", ""),
                            "units": getattr(model, "units", "")})
    return patch, history
