"""Victim depth-model contract, adapter registry and the bundled toy network.

An adapter exposes ``forward`` on batches of channels-last images and must be
differentiable with respect to its input.  Weights are frozen on construction
and never touched by the attack code.
"""
from __future__ import annotations

import hashlib
import os
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import AdapterNotFound, GradientUnavailable, NonFiniteOutput, ShapeError
from .patch_core import DepthMap

WEIGHTS_ENV = "STEALTHPATCH_WEIGHTS"


class DepthModel:
    """Base adapter.  Subclasses implement :meth:`forward`."""

    name = "depth-model"
    units = "model"
    supports_input_gradients = True

    def __init__(self, input_size: Tuple[int, int]):
        self.input_size = tuple(input_size)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """``B x H x W x 3`` in ``[0, 1]`` to ``B x H x W`` depth."""
        raise NotImplementedError

    def _check_input(self, image) -> torch.Tensor:
        x = torch.as_tensor(image)
        if not x.is_floating_point():
            x = x.float()
        if tuple(x.shape) != (*self.input_size, 3):
            raise ShapeError(f"{self.name} expects {(*self.input_size, 3)}, got {tuple(x.shape)}")
        return x

    def predict(self, image) -> DepthMap:
        x = self._check_input(image)
        with torch.no_grad():
            depth = self.forward(x[None])[0]
        if not torch.isfinite(depth).all():
            raise NonFiniteOutput(f"{self.name} produced non-finite depth")
        return DepthMap(depth.cpu().numpy(), units=self.units)

    def input_gradient(self, image, scalar_loss_fn: Callable[[torch.Tensor], torch.Tensor]):
        """Gradient of ``scalar_loss_fn(depth)`` with respect to every input pixel."""
        if not self.supports_input_gradients:
            raise GradientUnavailable(f"{self.name} cannot differentiate its input")
        x = self._check_input(image).detach().clone().requires_grad_(True)
        loss = scalar_loss_fn(self.forward(x[None])[0])
        if not isinstance(loss, torch.Tensor) or not loss.requires_grad:
            return np.zeros(x.shape, dtype=np.float64 if x.dtype == torch.float64 else np.float32)
        (grad,) = torch.autograd.grad(loss, x, allow_unused=True)
        if grad is None:
            grad = torch.zeros_like(x)
        return grad.detach().cpu().numpy()

    def weights_hash(self) -> str:
        return ""


class TorchDepthModel(DepthModel):
    """Adapter around an ``nn.Module`` taking ``B x 3 x H x W`` and returning ``B x 1 x H x W``."""

    def __init__(self, module: nn.Module, input_size, name: Optional[str] = None,
                 units: str = "model"):
        super().__init__(input_size)
        self.module = module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        if name:
            self.name = name
        self.units = units

    @property
    def dtype(self):
        return next(self.module.parameters()).dtype

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = images.to(self.dtype).permute(0, 3, 1, 2)
        out = self.module(x)
        return out[:, 0]

    def to(self, dtype) -> "TorchDepthModel":
        self.module.to(dtype)
        return self

    def weights_hash(self) -> str:
        h = hashlib.sha256()
        for key, tensor in sorted(self.module.state_dict().items()):
            h.update(key.encode())
            h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()


class ToyDepthNet(nn.Module):
    """Small seeded encoder-decoder: five convolutions and a bounded depth head.

    The first layer is a fixed Gaussian pre-blur followed by a strided
    convolution, so the network reads smooth image structure the way a depth
    network reads layout and shading; the decoder brings the prediction back to
    input resolution.  Output depth lies in ``(min_depth, max_depth)``.
    """

    def __init__(self, seed: int = 0, width: int = 16, min_depth: float = 0.5,
                 max_depth: float = 10.0):
        super().__init__()
        self.min_depth = min_depth
        self.max_depth = max_depth
        self.enc1 = nn.Conv2d(3, width, 5, stride=2, padding=2)
        self.enc2 = nn.Conv2d(width, 2 * width, 5, stride=2, padding=2)
        self.mid = nn.Conv2d(2 * width, 2 * width, 3, padding=1)
        self.dec1 = nn.Conv2d(3 * width, width, 3, padding=1)
        self.head = nn.Conv2d(width, 1, 3, padding=1)
        self.register_buffer("blur", _gaussian_kernel(1.0, 5))
        gen = torch.Generator().manual_seed(seed)
        for conv in (self.enc1, self.enc2, self.mid, self.dec1, self.head):
            fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.05)

    def forward(self, x):
        x = F.conv2d(F.pad(x - 0.5, (2, 2, 2, 2), mode="replicate"),
                     self.blur.to(x.dtype).expand(3, 1, 5, 5), groups=3)
        e1 = torch.tanh(self.enc1(x))
        e2 = torch.tanh(self.enc2(e1))
        m = torch.tanh(self.mid(e2)) + e2
        up = F.interpolate(m, size=e1.shape[-2:], mode="bilinear", align_corners=False)
        d = torch.tanh(self.dec1(torch.cat([up, e1], dim=1)))
        d = F.interpolate(d, size=x.shape[-2:], mode="bilinear", align_corners=False)
        logit = self.head(d)
        return self.min_depth + (self.max_depth - self.min_depth) * torch.sigmoid(logit)


def _gaussian_kernel(sigma: float, size: int) -> torch.Tensor:
    ax = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-ax ** 2 / (2 * sigma ** 2))
    k = torch.outer(g, g)
    return (k / k.sum()).float()[None, None]


class ToyDepthModel(TorchDepthModel):
    """The bundled 128x128 toy victim, optionally warmed up on synthetic scenes."""

    name = "toy"
    units = "toy-m"

    def __init__(self, seed: int = 0, warmup_steps: int = 0, dtype=torch.float32):
        torch_state = torch.random.get_rng_state()
        try:
            net = ToyDepthNet(seed=seed)
            if warmup_steps:
                warm_up(net, warmup_steps, seed=seed)
        finally:
            torch.random.set_rng_state(torch_state)
        super().__init__(net.to(dtype), (128, 128), name="toy", units="toy-m")


def warm_up(net: nn.Module, steps: int = 200, seed: int = 0, lr: float = 1e-3, batch: int = 4):
    """Briefly fit ``net`` to synthetic scenes whose depth follows layout and shading."""
    from .synthetic import synthetic_scenes

    gen = np.random.default_rng(seed + 7919)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    net.train()
    for _ in range(steps):
        scenes = synthetic_scenes(batch, (128, 128), seed=int(gen.integers(2**31 - 1)))
        x = torch.as_tensor(np.stack([s.image for s in scenes])).permute(0, 3, 1, 2)
        y = torch.as_tensor(np.stack([s.reference_depth for s in scenes]))[:, None]
        loss = F.l1_loss(net(x), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    return net


_REGISTRY: Dict[str, Callable[..., DepthModel]] = {}


def register_adapter(name: str):
    def deco(factory):
        _REGISTRY[name] = factory
        return factory
    return deco


def available_adapters():
    return sorted(_REGISTRY)


def get_adapter(name: str, **kwargs) -> DepthModel:
    """Build a registered adapter by name.  Published-model plug-ins read
    their weights from ``$STEALTHPATCH_WEIGHTS``."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise AdapterNotFound(name, available_adapters()) from None
    return factory(**kwargs)


def weights_root() -> Optional[str]:
    return os.environ.get(WEIGHTS_ENV)


@register_adapter("toy")
def _toy(seed: int = 0, warmup_steps: int = 0, **_):
    return ToyDepthModel(seed=seed, warmup_steps=warmup_steps)
