"""
What the patch looks like after random physical transforms
===========================================================

Every training step pastes the patch after a random draw of scale, rotation,
perspective, edge cropping, brightness, contrast and pixel noise.  This script
renders a few draws side by side, along with the footprint that marks which
tile pixels still carry patch content.
"""
import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from stealthpatch import transforms as T
from stealthpatch.synthetic import natural_image

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(exist_ok=True)

pattern = natural_image("astronaut")
rng = np.random.default_rng(3)
draws = [T.sample(rng) for _ in range(6)]

fig, axes = plt.subplots(2, 6, figsize=(12, 4.4))
for col, params in enumerate(draws):
    tile, footprint = T.apply(pattern, params, (96, 96))
    # outside the footprint the scene shows through; gray stands in for the scene here
    fp = footprint.numpy()[..., None]
    axes[0, col].imshow(tile.numpy() * fp + 0.5 * (1 - fp))
    axes[0, col].set_title(f"rot {params.rotation_deg:+.0f}, x{params.scale:.2f}", fontsize=8)
    axes[1, col].imshow(footprint.numpy(), cmap="gray", vmin=0, vmax=1)
    axes[1, col].set_title(f"kept {footprint.numpy().mean():.0%}", fontsize=8)
for ax in axes.ravel():
    ax.set_axis_off()
fig.tight_layout()
fig.savefig(out / "transform_gallery.png", dpi=90)
print(f"wrote {out / 'transform_gallery.png'}")

# The identity draw leaves the pattern untouched.
tile, footprint = T.apply(pattern, T.TransformParams.identity(), (256, 256))
print("identity deviation:", float(np.abs(tile.numpy() - pattern).max()))
