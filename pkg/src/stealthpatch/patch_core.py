"""Images, masks, patches and the compositing step that pastes a patch into a scene.

Images are channels-last ``(H, W, 3)`` floats in ``[0, 1]``.  The compositing
functions are written against plain array arithmetic so they accept either
numpy arrays or torch tensors; with tensors, gradients flow into the tile
through the ``mask == 1`` region only.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
import os
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import DimensionMismatch, OutOfBounds, SidecarMismatch

PATCH_SIZE = 256
SIDECAR_SCHEMA = 1


@dataclass(frozen=True)
class Scene:
    image: np.ndarray
    reference_depth: Optional[np.ndarray] = None
    identifier: str = ""

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float32)
        if img.ndim != 3 or img.shape[2] != 3:
            raise DimensionMismatch(f"scene image must be HxWx3, got {img.shape}")
        if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
            raise ValueError("scene image values must be finite and within [0, 1]")
        object.__setattr__(self, "image", img)
        if self.reference_depth is not None:
            ref = np.asarray(self.reference_depth, dtype=np.float32)
            if ref.shape != img.shape[:2]:
                raise DimensionMismatch(
                    f"reference depth {ref.shape} does not match image {img.shape[:2]}")
            object.__setattr__(self, "reference_depth", ref)

    @property
    def size(self) -> Tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray
    units: str = "model"

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 2:
            raise DimensionMismatch(f"depth map must be HxW, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("depth map contains non-finite values")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class PatchMask:
    """Binary placement mask plus the rectangle that bounds its nonzero entries."""

    values: np.ndarray
    bounding_box: Tuple[int, int, int, int]  # row, col, height, width

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 2:
            raise DimensionMismatch(f"mask must be HxW, got {vals.shape}")
        if not np.all((vals == 0) | (vals == 1)):
            raise ValueError("mask values must be exactly 0 or 1")
        r, c, h, w = self.bounding_box
        outside = vals.copy()
        outside[r:r + h, c:c + w] = 0
        if outside.any():
            raise ValueError("mask has nonzero entries outside its bounding box")
        object.__setattr__(self, "values", vals.astype(np.float32))

    @property
    def shape(self):
        return self.values.shape

    @property
    def area_ratio(self) -> float:
        return float(self.values.sum()) / float(self.values.size)


@dataclass(frozen=True)
class Patch:
    """A natural base image ``N`` plus a perturbation bounded by ``epsilon``."""

    natural_base: np.ndarray
    perturbation: np.ndarray
    epsilon: float
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        base = np.asarray(self.natural_base, dtype=np.float32)
        delta = np.asarray(self.perturbation, dtype=np.float32)
        if base.shape != delta.shape or base.ndim != 3 or base.shape[2] != 3:
            raise DimensionMismatch(
                f"natural base {base.shape} and perturbation {delta.shape} must be equal HxWx3")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        object.__setattr__(self, "natural_base", base)
        object.__setattr__(self, "perturbation", delta)

    def is_valid(self, atol: float = 1e-7) -> bool:
        composed = self.natural_base + self.perturbation
        return (float(np.abs(self.perturbation).max(initial=0.0)) <= self.epsilon + atol
                and composed.min() >= -atol and composed.max() <= 1.0 + atol)


def compose_patch(patch: Patch) -> np.ndarray:
    """Return the displayed pattern ``clamp(N + delta, 0, 1)``."""
    return np.clip(patch.natural_base + patch.perturbation, 0.0, 1.0)


def compose(natural_base, delta):
    """Differentiable counterpart of :func:`compose_patch` for tensors."""
    return torch.clamp(natural_base + delta, 0.0, 1.0)


def _mask_like(mask, ref):
    m = mask.values if isinstance(mask, PatchMask) else mask
    if isinstance(ref, torch.Tensor):
        m = torch.as_tensor(m, dtype=ref.dtype, device=ref.device)
    else:
        m = np.asarray(m, dtype=np.result_type(ref, np.float32))
    return m


def apply_patch(scene_image, tile_canvas, mask):
    """Composite ``tile_canvas`` over ``scene_image`` where ``mask`` is 1.

    ``tile_canvas`` must already be aligned with the scene (same ``H x W``);
    see :func:`place_tile`.
    """
    m = _mask_like(mask, tile_canvas)
    if tuple(scene_image.shape) != tuple(tile_canvas.shape):
        raise DimensionMismatch(
            f"scene {tuple(scene_image.shape)} and tile {tuple(tile_canvas.shape)} differ")
    if tuple(m.shape) != tuple(scene_image.shape[:2]):
        raise DimensionMismatch(
            f"mask {tuple(m.shape)} does not match scene {tuple(scene_image.shape[:2])}")
    if isinstance(tile_canvas, torch.Tensor) and not isinstance(scene_image, torch.Tensor):
        scene_image = torch.as_tensor(scene_image, dtype=tile_canvas.dtype)
    m = m[..., None]
    return (1 - m) * scene_image + m * tile_canvas


def make_mask(image_height: int, image_width: int, placement: Tuple[int, int],
              patch_pixels: Tuple[int, int]) -> PatchMask:
    row, col = placement
    h, w = patch_pixels
    if h <= 0 or w <= 0:
        raise OutOfBounds(f"patch rectangle {h}x{w} is empty")
    if row < 0 or col < 0 or row + h > image_height or col + w > image_width:
        raise OutOfBounds(
            f"rectangle at ({row}, {col}) of size {h}x{w} exceeds {image_height}x{image_width}")
    values = np.zeros((image_height, image_width), dtype=np.float32)
    values[row:row + h, col:col + w] = 1.0
    return PatchMask(values, (row, col, h, w))


def patch_side_for_scale(image_height: int, image_width: int, scale: float) -> int:
    """Side length of a square patch covering ``scale`` of the image area."""
    side = int(round(np.sqrt(scale * image_height * image_width)))
    return max(1, min(side, image_height, image_width))


def place_tile(tile, footprint, image_size: Tuple[int, int], top_left: Tuple[int, int]):
    """Pad a transformed tile and its footprint onto a full-image canvas.

    Returns ``(canvas, mask_values)``.  Padding is differentiable, so gradients
    reach the tile.  Raises :class:`OutOfBounds` if the tile does not fit.
    """
    H, W = image_size
    th, tw = tile.shape[0], tile.shape[1]
    r, c = top_left
    if r < 0 or c < 0 or r + th > H or c + tw > W:
        raise OutOfBounds(f"tile {th}x{tw} at ({r}, {c}) exceeds {H}x{W}")
    pad = (0, 0, c, W - c - tw, r, H - r - th)
    canvas = F.pad(tile, pad)
    mask = F.pad(footprint, pad[2:])
    return canvas, mask


# --------------------------------------------------------------------------
# persistence: 8-bit PNG of the composed pattern + JSON sidecar


def _pack(arr: np.ndarray) -> str:
    return base64.b64encode(zlib.compress(np.ascontiguousarray(arr, "<f4").tobytes())).decode()


def _unpack(text: str, shape) -> np.ndarray:
    raw = zlib.decompress(base64.b64decode(text))
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def content_hash(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, "<f4").tobytes()).hexdigest()


def to_uint8(image) -> np.ndarray:
    return np.round(np.clip(np.asarray(image), 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(image) -> np.ndarray:
    return np.asarray(image, dtype=np.float32) / 255.0


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def png_bytes(image) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image)).save(buf, format="PNG")
    return buf.getvalue()


def sidecar_path(png_path) -> Path:
    return Path(png_path).with_suffix(".json")


def save_patch(patch: Patch, png_path, config: Optional[dict] = None) -> Tuple[Path, Path]:
    """Write the composed pattern as PNG and a JSON sidecar that restores it losslessly."""
    composed = compose_patch(patch)
    pixels = to_uint8(composed)
    sidecar = {
        "schema_version": SIDECAR_SCHEMA,
        "epsilon": float(patch.epsilon),
        "shape": list(patch.natural_base.shape),
        "natural_sha256": content_hash(patch.natural_base),
        "pixels_sha256": hashlib.sha256(pixels.tobytes()).hexdigest(),
        "natural_base": _pack(patch.natural_base),
        "perturbation": _pack(patch.perturbation),
        "config": config or {},
        "metadata": patch.metadata,
    }
    png_path = Path(png_path)
    side = sidecar_path(png_path)
    atomic_write(png_path, png_bytes(composed))
    atomic_write(side, json.dumps(sidecar, indent=2, sort_keys=True).encode())
    return png_path, side


def load_patch(png_path) -> Tuple[Patch, dict]:
    """Load a patch and verify the PNG against its sidecar.

    Raises :class:`SidecarMismatch` when the image cannot be decoded or its
    pixels disagree with what the sidecar reproduces.
    """
    png_path = Path(png_path)
    side = sidecar_path(png_path)
    try:
        meta = json.loads(side.read_text())
    except (OSError, ValueError) as exc:
        raise SidecarMismatch(f"unreadable sidecar {side}: {exc}") from exc
    shape = tuple(meta["shape"])
    base = _unpack(meta["natural_base"], shape)
    delta = _unpack(meta["perturbation"], shape)
    if content_hash(base) != meta["natural_sha256"]:
        raise SidecarMismatch("natural image hash does not match sidecar")
    patch = Patch(base, delta, meta["epsilon"], metadata=meta.get("metadata", {}))
    try:
        with Image.open(png_path) as im:
            pixels = np.asarray(im.convert("RGB"))
    except Exception as exc:  # PIL raises a zoo of types for corrupt files
        raise SidecarMismatch(f"cannot decode {png_path}: {exc}") from exc
    if pixels.shape != shape or not np.array_equal(pixels, to_uint8(compose_patch(patch))):
        raise SidecarMismatch(f"{png_path} pixels disagree with sidecar {side}")
    if hashlib.sha256(pixels.tobytes()).hexdigest() != meta["pixels_sha256"]:
        raise SidecarMismatch(f"{png_path} pixel hash disagrees with sidecar")
    return patch, meta
