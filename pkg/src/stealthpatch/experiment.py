"""Experiment workflow: configuration, scene ingestion, attack runs, evaluation sweeps, reports.

Configuration files are plain ``key = value`` lines.  Values are JSON
literals (``0.03``, ``"toy"``, ``[90, 70]``, ``null``); dotted keys address
sections, e.g. ``attack.epsilon`` or ``defenses.jpeg``.  Lines starting with
``#`` are comments.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image

from . import transforms as T
from .baselines import PixelAttackConfig, depth_loss_fn, fgsm, mi_fgsm, random_patch
from .defenses import DEFAULT_SWEEP, defense_fn, effective_kernel
from .errors import ConfigError, EmptyDataset
from .evaluation import adversarial_images, draw_placements, evaluate_pattern
from .metrics import AttackReport, affected_ratio, depth_error, ssim
from .models import DepthModel, get_adapter
from .optimizer import AttackConfig, optimize, render
from .patch_core import (PATCH_SIZE, Scene, atomic_write, compose_patch, from_uint8,
                         load_patch, make_mask, patch_side_for_scale, png_bytes, save_patch)
from .synthetic import natural_image, synthetic_scenes

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
REPORT_COLUMNS = ["run_id", "model", "mode", "scale", "placement_seed", "defense",
                  "defense_param", "E_d", "R_a", "ssim", "units"]


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    model: str = "toy"
    model_options: Dict[str, object] = field(default_factory=dict)
    data_dir: Optional[str] = None
    layout: str = "flat"
    synthetic_scenes: int = 8
    synthetic_seed: int = 1
    natural_image: str = "builtin:chelsea"
    output_dir: str = "runs/default"
    seed: int = 0
    attack: AttackConfig = field(default_factory=AttackConfig)
    scales: List[float] = field(default_factory=lambda: [0.007, 0.01, 0.02, 0.05])
    placement_seeds: List[int] = field(default_factory=lambda: [0])
    eval_draws: int = 4
    eval_transforms: bool = True
    threshold: float = 0.1
    defenses: Dict[str, List] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_SWEEP.items()})
    visualize: int = 4
    workers: int = 1
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if isinstance(self.attack, dict):
            self.attack = AttackConfig.from_dict(self.attack)
        self.attack.rng_seed = self.seed
        if self.layout not in ("flat", "nyu"):
            raise ConfigError(f"layout must be 'flat' or 'nyu', got {self.layout!r}")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema {self.schema_version}")
        unknown = set(self.defenses) - set(DEFAULT_SWEEP)
        if unknown:
            raise ConfigError(f"unknown defenses: {sorted(unknown)}")

    def validate(self) -> "ExperimentConfig":
        if self.data_dir is not None and not Path(self.data_dir).is_dir():
            raise ConfigError(f"data directory {self.data_dir} does not exist")
        if not self.natural_image.startswith("builtin:") and not Path(self.natural_image).is_file():
            raise ConfigError(f"natural image {self.natural_image} does not exist")
        return self

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["attack"] = {k: v for k, v in self.attack.to_dict().items() if k != "rng_seed"}
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_text(self) -> str:
        lines = [f"# stealthpatch experiment config (schema {SCHEMA_VERSION})"]
        for key, value in _flatten(self.to_dict()):
            lines.append(f"{key} = {json.dumps(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(parse_config_text(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def config_hash(self) -> str:
        """Hash of everything that affects the numbers (not where or how fast they are written)."""
        d = self.to_dict()
        for key in ("output_dir", "workers", "visualize"):
            d.pop(key)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @property
    def run_id(self) -> str:
        return self.config_hash()[:12]


_DICT_SECTIONS = {"model_options", "defenses"}


def _flatten(d: dict, prefix: str = "") -> Iterable[Tuple[str, object]]:
    for key in sorted(d):
        value = d[key]
        name = f"{prefix}{key}"
        if isinstance(value, dict) and (value or name in _DICT_SECTIONS):
            if not value:
                continue
            yield from _flatten(value, name + ".")
        else:
            yield name, value


def parse_config_text(text: str) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            parsed = json.loads(value)
        except ValueError:
            parsed = value  # bare strings are allowed
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"line {lineno}: {key} conflicts with an earlier value")
        node[parts[-1]] = parsed
    return out


# --------------------------------------------------------------------------
# data


@dataclass
class CatalogEntry:
    identifier: str
    image_path: str
    depth_path: Optional[str] = None


@dataclass
class SceneCatalog:
    entries: List[CatalogEntry]
    scenes: List[Scene]
    warnings: List[str]
    pairing: str

    def __len__(self):
        return len(self.scenes)


def _load_rgb(path: Path, size) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB").resize((size[1], size[0]), Image.BILINEAR)
        return from_uint8(np.asarray(im))


def _load_depth(path: Path, size) -> np.ndarray:
    if path.suffix == ".npy":
        depth = np.load(path).astype(np.float32)
    else:
        with Image.open(path) as im:
            depth = np.asarray(im, dtype=np.float32) / 1000.0  # 16-bit millimetres
    im = Image.fromarray(depth.astype(np.float32), mode="F").resize((size[1], size[0]), Image.NEAREST)
    return np.asarray(im, dtype=np.float32)


def ingest(data_dir, layout: str = "flat", size: Tuple[int, int] = (128, 128)) -> SceneCatalog:
    """Scan ``data_dir`` for scenes.

    ``flat``: every image file directly inside the directory.  ``nyu``:
    ``rgb/<stem>.*`` paired with ``depth/<stem>.npy`` (metres) or
    ``depth/<stem>.png`` (16-bit millimetres).  Unreadable files are skipped
    and listed in ``warnings``.
    """
    root = Path(data_dir)
    if not root.is_dir():
        raise EmptyDataset(f"{root} is not a directory")
    image_dir = root / "rgb" if layout == "nyu" else root
    files = sorted(p for p in image_dir.glob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    pairing = ("rgb/<stem>.* + depth/<stem>.npy|png (uint16 mm)" if layout == "nyu"
               else "images only")
    entries, scenes, warnings, seen = [], [], [], set()
    for path in files:
        ident = path.stem
        if ident in seen:
            warnings.append(f"{path}: duplicate identifier {ident!r}, skipped")
            continue
        depth_path = None
        if layout == "nyu":
            for suffix in (".npy", ".png"):
                cand = root / "depth" / f"{ident}{suffix}"
                if cand.exists():
                    depth_path = cand
                    break
        try:
            image = _load_rgb(path, size)
            depth = _load_depth(depth_path, size) if depth_path else None
            scenes.append(Scene(image, depth, ident))
        except Exception as exc:  # corrupt files come in many flavours
            warnings.append(f"{path}: {exc}")
            continue
        seen.add(ident)
        entries.append(CatalogEntry(ident, str(path), str(depth_path) if depth_path else None))
    for w in warnings:
        log.warning(w)
    if not scenes:
        raise EmptyDataset(f"no readable images in {image_dir}")
    return SceneCatalog(entries, scenes, warnings, pairing)


def load_scenes(config: ExperimentConfig, model: DepthModel) -> List[Scene]:
    if config.data_dir is None:
        return synthetic_scenes(config.synthetic_scenes, model.input_size, seed=config.synthetic_seed)
    return ingest(config.data_dir, config.layout, model.input_size).scenes


def load_natural(source: str) -> np.ndarray:
    """``builtin:<name>`` for a bundled photograph, otherwise an image path."""
    if source.startswith("builtin:"):
        return natural_image(source.split(":", 1)[1])
    with Image.open(source) as im:
        im = im.convert("RGB")
        s = min(im.size)
        left, top = (im.width - s) // 2, (im.height - s) // 2
        im = im.crop((left, top, left + s, top + s)).resize((PATCH_SIZE, PATCH_SIZE), Image.BICUBIC)
        return from_uint8(np.asarray(im))


# --------------------------------------------------------------------------
# reports


@dataclass
class ReportRow:
    run_id: str
    model: str
    mode: str
    scale: float
    placement_seed: int
    defense: str
    defense_param: str
    E_d: float
    R_a: float
    ssim: Optional[float]
    units: str


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS])
    return buf.getvalue()


def rows_from_csv(text: str) -> List[ReportRow]:
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        out.append(ReportRow(
            run_id=rec["run_id"], model=rec["model"], mode=rec["mode"],
            scale=float(rec["scale"]), placement_seed=int(rec["placement_seed"]),
            defense=rec["defense"], defense_param=rec["defense_param"],
            E_d=float(rec["E_d"]), R_a=float(rec["R_a"]),
            ssim=float(rec["ssim"]) if rec["ssim"] else None, units=rec["units"]))
    return out


def _write_json(path, obj):
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n").encode())


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(type(o).__name__)


def depth_figure(image, d_clean, d_adv, title: str = "") -> bytes:
    """PNG bytes: adversarial image next to clean and adversarial depth on one colour scale."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    lo = float(min(d_clean.min(), d_adv.min()))
    hi = float(max(d_clean.max(), d_adv.max()))
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    axes[0].imshow(np.clip(image, 0, 1))
    axes[0].set_title("input")
    axes[1].imshow(d_clean, cmap="viridis", vmin=lo, vmax=hi)
    axes[1].set_title("clean depth")
    im = axes[2].imshow(d_adv, cmap="viridis", vmin=lo, vmax=hi)
    axes[2].set_title("adversarial depth")
    for ax in axes:
        ax.set_axis_off()
    fig.colorbar(im, ax=axes, fraction=0.025)
    if title:
        fig.suptitle(title)
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=80)
    plt.close(fig)
    return buf.getvalue()


def _visualize(out_dir: Path, prefix: str, model, scenes, pattern, placements, scale, limit):
    written = []
    seen = set()
    for pl, img, _ in adversarial_images(scenes, pattern, placements, scale):
        if len(written) >= limit:
            break
        if pl.scene_index in seen:
            continue
        seen.add(pl.scene_index)
        scene = scenes[pl.scene_index]
        d_clean = model.predict(scene.image).values
        d_adv = model.predict(img).values
        path = out_dir / f"{prefix}_{scene.identifier}.png"
        atomic_write(path, depth_figure(img, d_clean, d_adv, scene.identifier))
        written.append(path)
    return written


# --------------------------------------------------------------------------
# workflows


def run_attack(config: ExperimentConfig, on_step=None) -> dict:
    """Train a patch and write patch PNG + sidecar, loss CSV, report CSV/JSON and figures.

    ``on_step`` is forwarded to :func:`optimize`.
    """
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = get_adapter(config.model, **config.model_options)
    scenes = load_scenes(config, model)
    natural = load_natural(config.natural_image)
    acfg = config.attack

    weights_before = model.weights_hash()
    started = time.perf_counter()
    patch, history = optimize(model, scenes, natural, acfg, on_step=on_step)
    elapsed = time.perf_counter() - started
    if model.weights_hash() != weights_before:
        raise RuntimeError("model weights changed during the attack")

    pattern = compose_patch(patch)
    placements = draw_placements(scenes, acfg.patch_scale, config.eval_draws, config.seed,
                                 acfg.transforms if config.eval_transforms else None)
    result = evaluate_pattern(model, scenes, pattern, acfg.patch_scale, placements,
                              threshold=config.threshold)
    control = evaluate_pattern(model, scenes, random_patch(pattern.shape, config.seed),
                               acfg.patch_scale, placements, threshold=config.threshold)
    stealth = ssim(pattern, natural)

    sidecar_cfg = {"experiment": config.to_dict(), "config_text": config.to_text(),
                   "config_hash": config.config_hash(), "seed": config.seed,
                   "model_weights_sha256": weights_before}
    png_path, side_path = save_patch(patch, out / "patch.png", sidecar_cfg)
    atomic_write(out / "loss.csv", history.to_csv().encode())

    row = ReportRow(config.run_id, model.name, acfg.mode, acfg.patch_scale, config.seed,
                    "none", "", result.E_d, result.R_a, stealth, model.units)
    report = AttackReport(result.E_d, result.R_a, stealth, acfg.patch_scale, acfg.mode,
                          model.units, config.to_dict(), result.per_scene)
    atomic_write(out / "report.csv", rows_to_csv([row]).encode())
    _write_json(out / "report.json", {
        **report.to_dict(), "run_id": config.run_id, "config_hash": config.config_hash(),
        "seed": config.seed, "model_weights_sha256": weights_before,
        "random_control": {"E_d": control.E_d, "R_a": control.R_a},
        "iterations": len(history), "seconds": elapsed})
    figures = _visualize(out, "viz", model, scenes, pattern, placements, acfg.patch_scale,
                         config.visualize)
    return {"patch": png_path, "sidecar": side_path, "loss": out / "loss.csv",
            "report_csv": out / "report.csv", "report_json": out / "report.json",
            "figures": figures, "report": report, "random_control": control,
            "history": history, "patch_object": patch}


def _sweep_cells(config: ExperimentConfig, defenses: Dict[str, Sequence], include_none: bool):
    cells = []
    for scale in config.scales:
        for pseed in config.placement_seeds:
            if include_none:
                cells.append((scale, pseed, "none", ""))
            for name, params in defenses.items():
                for p in params:
                    cells.append((scale, pseed, name, p))
    return cells


def _defense_label(name, param) -> str:
    if name == "median" and effective_kernel(int(param)) != int(param):
        return f"{param}->{effective_kernel(int(param))}"
    return "" if name == "none" else str(param)


def run_eval(patch_file, config: ExperimentConfig, defenses: Optional[Dict[str, Sequence]] = None,
             include_none: bool = True, prefix: str = "eval") -> dict:
    """Score a saved patch over every (scale, placement seed, defense) cell.

    Writes ``<prefix>.csv`` / ``<prefix>.json`` and side-by-side depth figures
    into the output directory.
    """
    patch, meta = load_patch(patch_file)
    model = get_adapter(config.model, **config.model_options)
    scenes = load_scenes(config, model)
    pattern = compose_patch(patch)
    stealth = ssim(pattern, patch.natural_base)
    defenses = config.defenses if defenses is None else defenses
    ranges = config.attack.transforms if config.eval_transforms else None
    cells = _sweep_cells(config, defenses, include_none)

    def score(cell):
        scale, pseed, name, param = cell
        placements = draw_placements(scenes, scale, config.eval_draws, pseed, ranges)
        fn = None if name == "none" else defense_fn(name, param, seed=pseed)
        res = evaluate_pattern(model, scenes, pattern, scale, placements, defense=fn,
                               threshold=config.threshold)
        return ReportRow(config.run_id, model.name, config.attack.mode, float(scale), int(pseed),
                         name, _defense_label(name, param), res.E_d, res.R_a, stealth, model.units)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            rows = list(pool.map(score, cells))
    else:
        rows = [score(c) for c in cells]

    sanity = []
    for name, params in defenses.items():
        for p in params:
            fn = defense_fn(name, p, seed=config.seed)
            errs = []
            for scene in scenes:
                d_clean = model.predict(scene.image).values
                d_def = model.predict(fn(scene.image)).values
                errs.append(depth_error(d_clean, d_def, np.ones_like(d_clean)))
            sanity.append({"defense": name, "defense_param": _defense_label(name, p),
                           "E_d_clean_vs_defended": float(np.mean(errs))})

    out = Path(config.output_dir)
    atomic_write(out / f"{prefix}.csv", rows_to_csv(rows).encode())
    _write_json(out / f"{prefix}.json", {
        "run_id": config.run_id, "patch": str(patch_file), "ssim": stealth,
        "rows": [asdict(r) for r in rows], "defended_clean": sanity,
        "noise_domain": "float (before 8-bit quantisation)"})
    placements = draw_placements(scenes, config.attack.patch_scale, 1, config.seed, ranges)
    figures = _visualize(out, f"viz_{prefix}", model, scenes, pattern, placements,
                         config.attack.patch_scale, config.visualize)
    return {"rows": rows, "defended_clean": sanity, "csv": out / f"{prefix}.csv",
            "json": out / f"{prefix}.json", "figures": figures}


def defend_sweep(patch_file, config: ExperimentConfig) -> dict:
    return run_eval(patch_file, config, include_none=True, prefix="defense")


def run_baseline(kind: str, config: ExperimentConfig,
                 pixel: PixelAttackConfig = PixelAttackConfig()) -> dict:
    """Pixel baselines (``fgsm``, ``mifgsm``) or the random-patch control.

    The metric mask is the patch region used by the patch attack: a square of
    ``attack.patch_scale`` of the image at a seeded position.
    """
    if kind not in ("fgsm", "mifgsm", "random"):
        raise ConfigError(f"unknown baseline {kind!r}")
    model = get_adapter(config.model, **config.model_options)
    scenes = load_scenes(config, model)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    scale = config.attack.patch_scale
    rng = np.random.default_rng([config.seed, 0xBA5E])
    pattern = random_patch((PATCH_SIZE, PATCH_SIZE, 3), config.seed)
    per_scene = []
    for scene in scenes:
        H, W = scene.size
        side = patch_side_for_scale(H, W, scale)
        top_left = (int(rng.integers(0, H - side + 1)), int(rng.integers(0, W - side + 1)))
        mask = make_mask(H, W, top_left, (side, side))
        d_clean = model.predict(scene.image)
        if kind == "random":
            with torch.no_grad():
                img, _ = render(torch.as_tensor(scene.image), torch.as_tensor(pattern),
                                T.TransformParams.identity(), (side, side), top_left)
            adv = img.numpy()
        elif kind == "fgsm":
            adv = fgsm(model, scene.image, depth_loss_fn(d_clean, mask), pixel.epsilon)
        else:
            adv = mi_fgsm(model, scene.image, depth_loss_fn(d_clean, mask), pixel)
        d_adv = model.predict(adv)
        atomic_write(out / f"{kind}_adv_{scene.identifier}.png", png_bytes(adv))
        per_scene.append({"scene": scene.identifier,
                          "E_d": depth_error(d_clean, d_adv, mask),
                          "R_a": affected_ratio(d_clean, d_adv, mask, config.threshold),
                          "linf": float(np.abs(adv - scene.image).max())})
    e_d = float(np.mean([r["E_d"] for r in per_scene]))
    r_a = float(np.mean([r["R_a"] for r in per_scene]))
    report = AttackReport(e_d, r_a, None, scale, config.attack.mode, model.units,
                          {**config.to_dict(), "baseline": kind, "pixel": asdict(pixel)}, per_scene)
    row = ReportRow(f"{kind}-{config.run_id}", model.name, config.attack.mode, scale, config.seed,
                    "none", "", e_d, r_a, None, model.units)
    atomic_write(out / f"{kind}_report.csv", rows_to_csv([row]).encode())
    _write_json(out / f"{kind}_report.json", report.to_dict())
    return {"report": report, "row": row}
