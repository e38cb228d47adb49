"""L-infinity projection that keeps the patch close to its natural base image."""
from __future__ import annotations

import numpy as np
import torch

from .patch_core import Patch

DEFAULT_EPSILON = 0.03


def project(delta, epsilon: float):
    """Clip every element of ``delta`` into ``[-epsilon, epsilon]``.

    Works on numpy arrays and torch tensors alike.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if isinstance(delta, torch.Tensor):
        return torch.clamp(delta, -epsilon, epsilon)
    return np.clip(delta, -epsilon, epsilon)


def constrain(natural_base, delta, epsilon: float):
    """Project ``delta`` then fold the ``[0, 1]`` clamp of ``N + delta`` back into it.

    The returned perturbation satisfies ``N + delta == clamp(N + delta)``
    exactly, so storing ``delta`` reproduces the displayed pattern.  The
    backsolved entries still satisfy ``|delta| <= epsilon`` because they move
    toward zero.
    """
    delta = project(delta, epsilon)
    lib = torch if isinstance(delta, torch.Tensor) else np
    composed = natural_base + delta
    # only touch violating entries so an already-valid delta is returned bit-for-bit
    return lib.where(composed > 1.0, 1.0 - natural_base,
                     lib.where(composed < 0.0, -natural_base, delta))


def constrain_patch(patch: Patch) -> Patch:
    delta = constrain(patch.natural_base, patch.perturbation, patch.epsilon)
    return Patch(patch.natural_base, delta.astype(np.float32), patch.epsilon,
                 metadata=patch.metadata)
