"""
Do input transformations blunt the patch?
=========================================

JPEG compression, median blur and Gaussian noise are applied to the attacked
image before the depth network sees it.  We train a short patch, then sweep
every defense strength through the experiment runner, which writes a CSV with
one row per setting plus the depth change each defense causes on clean images.
"""
import sys
from pathlib import Path

from stealthpatch import AttackConfig, ExperimentConfig, defend_sweep, run_attack

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output") / "sweep"

config = ExperimentConfig(output_dir=str(out), synthetic_scenes=8, scales=[0.01, 0.05],
                          eval_draws=2, visualize=2, attack=AttackConfig(epochs=60))
run = run_attack(config)
print(f"patch E_d={run['report'].E_d:.3f} (random control {run['random_control'].E_d:.3f})")

sweep = defend_sweep(run["patch"], config)
for row in sweep["rows"]:
    print(f"scale {row.scale:<5} {row.defense:>8} {row.defense_param:>6}  E_d={row.E_d:.3f}  R_a={row.R_a:.3f}")

# Defenses are not free: they move the depth of clean images too.
for entry in sweep["defended_clean"]:
    print(f"clean image, {entry['defense']} {entry['defense_param']}: "
          f"depth change {entry['E_d_clean_vs_defended']:.3f}")
print(f"full table: {sweep['csv']}")
