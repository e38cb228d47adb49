"""
Patch versus whole-image pixel attacks
======================================

FGSM and MI-FGSM perturb every pixel of the image by at most 8/255.  The
patch instead replaces a small region with bounded content.  Both are scored
on the same region so the numbers are directly comparable.
"""
import numpy as np

from stealthpatch import PixelAttackConfig, ToyDepthModel, fgsm, mi_fgsm
from stealthpatch.baselines import depth_loss_fn
from stealthpatch.metrics import depth_error
from stealthpatch.patch_core import make_mask, patch_side_for_scale
from stealthpatch.synthetic import synthetic_scenes

model = ToyDepthModel(seed=0)
scenes = synthetic_scenes(4, model.input_size, seed=1)
side = patch_side_for_scale(128, 128, 0.01)

rows = []
for scene in scenes:
    mask = make_mask(128, 128, (80, 60), (side, side))
    clean = model.predict(scene.image)
    # J is the untargeted depth loss; stepping down J pushes the region's depth away.
    loss = depth_loss_fn(clean, mask)
    one = fgsm(model, scene.image, loss, 8 / 255)
    many = mi_fgsm(model, scene.image, loss, PixelAttackConfig())
    rows.append((depth_error(clean, model.predict(one), mask),
                 depth_error(clean, model.predict(many), mask),
                 float(np.abs(many - scene.image).max())))

fg, mi, linf = np.mean(rows, axis=0)
print(f"FGSM    E_d in region: {fg:.3f}")
print(f"MI-FGSM E_d in region: {mi:.3f}  (largest change {linf * 255:.1f}/255)")

# With one step, no momentum and alpha = epsilon, MI-FGSM is exactly FGSM.
cfg = PixelAttackConfig(epsilon=8 / 255, step_alpha=8 / 255, steps=1, decay_mu=0.0)
print("one-step MI-FGSM equals FGSM:",
      np.array_equal(mi_fgsm(model, scenes[0].image, loss, cfg), fgsm(model, scenes[0].image, loss, 8 / 255)))
