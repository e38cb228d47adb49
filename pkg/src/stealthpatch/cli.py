"""Command-line entry point: ``stealthpatch {attack,eval,defend-sweep,baseline}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from .baselines import PixelAttackConfig
from .errors import StealthPatchError
from .experiment import ExperimentConfig, defend_sweep, run_attack, run_baseline, run_eval
from .models import WEIGHTS_ENV

log = logging.getLogger("stealthpatch")

# flag -> (section, key, type); section None means a top-level ExperimentConfig field
_OVERRIDES = {
    "model": (None, "model", str),
    "data_dir": (None, "data_dir", str),
    "layout": (None, "layout", str),
    "natural_image": (None, "natural_image", str),
    "output_dir": (None, "output_dir", str),
    "seed": (None, "seed", int),
    "synthetic_scenes": (None, "synthetic_scenes", int),
    "draws": (None, "eval_draws", int),
    "threshold": (None, "threshold", float),
    "workers": (None, "workers", int),
    "epochs": ("attack", "epochs", int),
    "batch": ("attack", "batch", int),
    "learning_rate": ("attack", "learning_rate", float),
    "epsilon": ("attack", "epsilon", float),
    "alpha": ("attack", "alpha", float),
    "beta": ("attack", "beta", float),
    "mode": ("attack", "mode", str),
    "target_depth": ("attack", "target_depth_c", float),
    "patch_scale": ("attack", "patch_scale", float),
}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    for flag, (_, _, typ) in _OVERRIDES.items():
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ, default=None)
    p.add_argument("--scales", type=float, nargs="+", help="evaluation patch scales")
    p.add_argument("--placement-seeds", type=int, nargs="+")
    p.add_argument("--static", action="store_true",
                   help="evaluate the untransformed pattern instead of sampled transforms")
    p.add_argument("--model-option", action="append", default=[], metavar="KEY=JSON",
                   help="extra keyword for the model adapter (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stealthpatch",
        description=f"Adversarial patches for depth estimation. Model weights root: ${WEIGHTS_ENV}.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="train a patch")
    _add_common(p)

    for name, helptext in (("eval", "score a saved patch across scales and defenses"),
                           ("defend-sweep", "score a saved patch under every defense")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        p.add_argument("--patch", required=True, help="patch PNG with its JSON sidecar")
        if name == "eval":
            p.add_argument("--no-defenses", action="store_true", help="only the undefended rows")

    p = sub.add_parser("baseline", help="pixel baselines and the random-patch control")
    p.add_argument("kind", choices=["fgsm", "mifgsm", "random"])
    _add_common(p)
    p.add_argument("--pixel-epsilon", type=float, default=8 / 255)
    p.add_argument("--step-alpha", type=float, default=2 / 255)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--decay", type=float, default=1.0)
    return parser


def config_from_args(args) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    d = base.to_dict()
    for flag, (section, key, _) in _OVERRIDES.items():
        value = getattr(args, flag)
        if value is None:
            continue
        (d[section] if section else d)[key] = value
    if args.scales:
        d["scales"] = args.scales
    if args.placement_seeds:
        d["placement_seeds"] = args.placement_seeds
    if args.static:
        d["eval_transforms"] = False
    for item in args.model_option:
        key, _, value = item.partition("=")
        d["model_options"][key] = json.loads(value)
    return ExperimentConfig.from_dict(d)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
        if args.command == "attack":
            out = run_attack(config)
            rep = out["report"]
            print(f"patch: {out['patch']}")
            print(f"E_d={rep.E_d:.4f} R_a={rep.R_a:.4f} ssim={rep.ssim:.4f} "
                  f"(random control E_d={out['random_control'].E_d:.4f})")
        elif args.command in ("eval", "defend-sweep"):
            config.validate()
            if args.command == "eval":
                out = run_eval(args.patch, config, defenses={} if args.no_defenses else None)
            else:
                out = defend_sweep(args.patch, config)
            for row in out["rows"]:
                print(f"scale={row.scale:<6} seed={row.placement_seed} {row.defense:>8} "
                      f"{row.defense_param:>6}  E_d={row.E_d:.4f} R_a={row.R_a:.4f}")
            print(f"report: {out['csv']}")
        else:
            config.validate()
            pixel = PixelAttackConfig(args.pixel_epsilon, args.step_alpha, args.steps, args.decay)
            out = run_baseline(args.kind, config, pixel)
            print(f"{args.kind}: E_d={out['report'].E_d:.4f} R_a={out['report'].R_a:.4f}")
    except (StealthPatchError, OSError, ValueError) as exc:
        print(f"error ({args.command}): {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
