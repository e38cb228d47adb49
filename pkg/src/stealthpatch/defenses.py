"""Input-transformation defenses applied to images before inference."""
from __future__ import annotations

import io
from typing import Callable, Dict, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import CodecError
from .patch_core import to_uint8

JPEG_QUALITIES = (90, 70, 50, 30)
MEDIAN_KERNELS = (5, 10, 15, 20)
NOISE_SIGMAS = (0.01, 0.02, 0.05, 0.1)


def jpeg_compress(image, quality: int) -> np.ndarray:
    """Baseline JPEG round trip through Pillow (4:4:4, no chroma subsampling, no optimisation)."""
    if not 1 <= int(quality) <= 100:
        raise CodecError(f"JPEG quality must be within 1..100, got {quality}")
    buf = io.BytesIO()
    try:
        Image.fromarray(to_uint8(image)).save(buf, format="JPEG", quality=int(quality),
                                              subsampling=0, optimize=False)
        buf.seek(0)
        with Image.open(buf) as im:
            out = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise CodecError(str(exc)) from exc
    return out


def effective_kernel(kernel: int) -> int:
    """Even kernel sizes are rounded up to the next odd size."""
    if kernel < 1:
        raise ValueError("kernel must be >= 1")
    return kernel if kernel % 2 else kernel + 1


def median_blur(image, kernel: int) -> np.ndarray:
    k = effective_kernel(int(kernel))
    img = np.asarray(image, dtype=np.float32)
    if k == 1:
        return img.copy()
    return ndimage.median_filter(img, size=(k, k, 1), mode="reflect")


def gaussian_noise(image, sigma: float, rng=None) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise in floating point, then clamp to ``[0, 1]``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    img = np.asarray(image, dtype=np.float32)
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(rng)
    noisy = img + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def defense_fn(name: str, param, seed: int = 0) -> Callable[[np.ndarray], np.ndarray]:
    """Bind a defense and its parameter into a one-argument callable.

    Gaussian noise draws from a generator seeded once per callable, so a sweep
    over many images is reproducible as a whole.
    """
    if name == "none":
        return lambda img: np.asarray(img, dtype=np.float32)
    if name == "jpeg":
        return lambda img: jpeg_compress(img, int(param))
    if name == "median":
        return lambda img: median_blur(img, int(param))
    if name == "gaussian":
        rng = np.random.default_rng([seed, int(round(float(param) * 1e6))])
        return lambda img: gaussian_noise(img, float(param), rng)
    raise ValueError(f"unknown defense {name!r}")


DEFAULT_SWEEP: Dict[str, Sequence] = {
    "jpeg": JPEG_QUALITIES,
    "median": MEDIAN_KERNELS,
    "gaussian": NOISE_SIGMAS,
}
