"""Adversarial patches against monocular depth estimation, with evaluation and defenses."""
from .errors import (AdapterNotFound, CodecError, ConfigError, DegenerateGeometry, DimensionMismatch,
                     EmptyDataset, EmptyMask, GradientUnavailable, NonFiniteLoss, NonFiniteOutput,
                     OutOfBounds, ShapeError, SidecarMismatch, StealthPatchError)
from .patch_core import (DepthMap, Patch, PatchMask, Scene, apply_patch, compose_patch, load_patch,
                         make_mask, save_patch)
from .projection import constrain, constrain_patch, project
from .transforms import TransformParams, TransformRanges
from .losses import LossWeights, targeted_depth_loss, total_loss, tv_loss, untargeted_depth_loss
from .models import DepthModel, TorchDepthModel, ToyDepthModel, available_adapters, get_adapter
from .optimizer import AttackConfig, LossHistory, optimize
from .metrics import AttackReport, affected_ratio, depth_error, ssim
from .baselines import PixelAttackConfig, fgsm, mi_fgsm, random_patch
from .defenses import gaussian_noise, jpeg_compress, median_blur
from .experiment import ExperimentConfig, defend_sweep, ingest, run_attack, run_baseline, run_eval

__version__ = "0.1.0"

__all__ = [
    "AdapterNotFound", "CodecError", "ConfigError", "DegenerateGeometry", "DimensionMismatch",
    "EmptyDataset", "EmptyMask", "GradientUnavailable", "NonFiniteLoss", "NonFiniteOutput",
    "OutOfBounds", "ShapeError", "SidecarMismatch", "StealthPatchError",
    "DepthMap", "Patch", "PatchMask", "Scene", "apply_patch", "compose_patch", "load_patch",
    "make_mask", "save_patch", "constrain", "constrain_patch", "project",
    "TransformParams", "TransformRanges",
    "LossWeights", "targeted_depth_loss", "total_loss", "tv_loss", "untargeted_depth_loss",
    "DepthModel", "TorchDepthModel", "ToyDepthModel", "available_adapters", "get_adapter",
    "AttackConfig", "LossHistory", "optimize",
    "AttackReport", "affected_ratio", "depth_error", "ssim",
    "PixelAttackConfig", "fgsm", "mi_fgsm", "random_patch",
    "gaussian_noise", "jpeg_compress", "median_blur",
    "ExperimentConfig", "defend_sweep", "ingest", "run_attack", "run_baseline", "run_eval",
]
