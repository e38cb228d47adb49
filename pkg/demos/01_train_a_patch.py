"""
Training a natural-looking patch against the toy depth network
===============================================================

A patch starts as a photograph and may only move each pixel by ``epsilon``.
We train it under random physical transforms, paste it into synthetic rooms
and measure how far the predicted depth moves inside the patch.
"""
import sys
from pathlib import Path

import numpy as np

from stealthpatch import AttackConfig, ToyDepthModel, optimize, ssim
from stealthpatch.baselines import random_patch
from stealthpatch.evaluation import adversarial_images, draw_placements, evaluate_pattern
from stealthpatch.experiment import depth_figure
from stealthpatch.patch_core import atomic_write, compose_patch, png_bytes
from stealthpatch.synthetic import natural_image, synthetic_scenes

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)

# The victim: a seeded, frozen encoder-decoder that maps 128x128 RGB to depth.
model = ToyDepthModel(seed=0)
scenes = synthetic_scenes(8, model.input_size, seed=1)
natural = natural_image("chelsea")

# Default hyper-parameters: Adam at 1e-3, epsilon 0.03, TV weight 0.5, 1% of the image.
config = AttackConfig(epochs=200, batch=8)
patch, history = optimize(model, scenes, natural, config)
# Each iteration sees different placements, so compare medians of the first and last 20 steps.
print(f"trained {len(history)} iterations; depth loss "
      f"{np.median(history.depth[:20]):.3f} -> {np.median(history.depth[-20:]):.3f}")

# Score on fresh placements, and score a uniform-noise patch on the very same placements.
placements = draw_placements(scenes, config.patch_scale, draws=4, seed=0)
pattern = compose_patch(patch)
ours = evaluate_pattern(model, scenes, pattern, config.patch_scale, placements)
noise = evaluate_pattern(model, scenes, random_patch(rng=0), config.patch_scale, placements)
print(f"trained patch: E_d={ours.E_d:.3f}  R_a={ours.R_a:.3f}")
print(f"random patch:  E_d={noise.E_d:.3f}  R_a={noise.R_a:.3f}")

# Stealthiness: how close does the patch stay to the photograph?
print(f"SSIM to the photograph: {ssim(pattern, natural):.3f}")
print(f"largest pixel change:   {np.abs(patch.perturbation).max():.4f}")

# Save the pattern and one clean-vs-attacked depth comparison.
atomic_write(out / "patch.png", png_bytes(pattern))
pl, image, _ = next(adversarial_images(scenes, pattern, placements[:1], config.patch_scale))
figure = depth_figure(image, model.predict(scenes[pl.scene_index].image).values,
                      model.predict(image).values, "trained patch")
atomic_write(out / "depth_comparison.png", figure)
print(f"wrote {out / 'patch.png'} and {out / 'depth_comparison.png'}")
