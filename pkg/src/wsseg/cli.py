"""Subcommand CLI chaining the pipeline stages with file-based boundaries.

Every stage reads files, writes files, and drops a ``manifest.json`` naming
its inputs, resolved configuration, and output content hashes, so any stage
can be reproduced and verified from its manifest alone.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 validation error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import data as dsets
from . import metrics as ev
from . import model as aff
from . import pairs as prs
from . import raster as ras
from . import walk as rw
from .cams import (assign_labels, background_map, format_alpha, normalize,
                   parse_alpha, select_cams, suppress_absent)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Configuration: defaults < config file < explicit flags
# ---------------------------------------------------------------------------

_KNOBS = {
    "alpha": (parse_alpha, "4", "background exponent for propagation ('inf' disables)"),
    "alpha_fg": (parse_alpha, "4", "strong background exponent (confident-class pass)"),
    "alpha_bg": (parse_alpha, "32", "weak background exponent (confident-background pass)"),
    "gamma": (float, "5", "pair radius in feature-grid cells"),
    "loss_fg": (float, "6", "divisor of the foreground pair loss"),
    "loss_bg": (float, "2", "divisor of the background pair loss"),
    "loss_neg": (float, "3", "divisor of the negative pair loss"),
    "beta": (float, "8", "element-wise affinity power before row normalization"),
    "iters": (int, "16", "random-walk applications"),
    "stride": (int, "2", "feature-grid reduction factor"),
    "conf_threshold": (float, "0.5", "classifier confidence cutoff for keeping a class"),
    "seed": (int, "0", "seed for training and pair sampling"),
    "epochs": (int, "200", "training epochs"),
    "lr": (float, "0.01", "SGD learning rate"),
    "momentum": (float, "0.9", "SGD momentum"),
    "pair_cap": (int, "4096", "max pairs per partition per step"),
    "eps": (float, "1e-7", "affinity clamp for the losses"),
    "min_fraction": (float, "0", "pixel fraction a class must exceed to count as present"),
}


@dataclass(frozen=True)
class PipelineConfig:
    alpha: float
    alpha_fg: float
    alpha_bg: float
    gamma: float
    loss_fg: float
    loss_bg: float
    loss_neg: float
    beta: float
    iters: int
    stride: int
    conf_threshold: float
    seed: int
    epochs: int
    lr: float
    momentum: float
    pair_cap: int
    eps: float
    min_fraction: float

    def weights(self) -> aff.LossWeights:
        return aff.LossWeights(self.loss_fg, self.loss_bg, self.loss_neg)

    def dual(self) -> prs.DualAlpha:
        return prs.DualAlpha(self.alpha_fg, self.alpha_bg)

    def train_config(self) -> aff.TrainConfig:
        return aff.TrainConfig(lr=self.lr, momentum=self.momentum, epochs=self.epochs,
                               pair_cap=self.pair_cap, seed=self.seed, eps=self.eps)

    def walk_config(self) -> rw.WalkConfig:
        return rw.WalkConfig(beta=self.beta, iterations=self.iters)

    def manifest_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and math.isinf(value):
                value = format_alpha(value)
            out[f.name] = value
        return out


def add_knob_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="flat 'key = value' config file; flags override it")
    for name, (_, default, help_text) in _KNOBS.items():
        flag = "--" + name.replace("_", "-")
        parser.add_argument(flag, type=str, default=None,
                            help=f"{help_text} (default {default})")


def load_config_file(path: Path) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key = key.strip()
            if key not in _KNOBS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = value.strip()
    return out


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    file_values = load_config_file(args.config) if args.config else {}
    resolved = {}
    for name, (convert, default, _) in _KNOBS.items():
        raw = getattr(args, name, None)
        if raw is None:
            raw = file_values.get(name, default)
        resolved[name] = convert(raw)
    cfg = PipelineConfig(**resolved)
    cfg.weights()
    cfg.dual()
    if cfg.stride < 1:
        raise ValueError(f"stride must be >= 1, got {cfg.stride}")
    return cfg


# ---------------------------------------------------------------------------
# Manifests and helpers
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, stage: str, cfg_dict: dict,
                   inputs: dict[str, Path], outputs: list[Path]) -> None:
    manifest = {
        "stage": stage,
        "config": cfg_dict,
        "inputs": {key: _sha256(p) for key, p in sorted(inputs.items())},
        "outputs": {p.name: _sha256(p) for p in sorted(outputs)},
    }
    text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        f.write(text)


def _map_scenes(fn, items, jobs: int) -> list:
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_palette(args) -> ras.ClassPalette:
    if getattr(args, "palette", None):
        return ras.load_palette(args.palette)
    return ras.deepglobe_palette()


def _scenes_with(records, attr, what):
    out = []
    for rec in records:
        if getattr(rec, attr) is None:
            raise FileNotFoundError(f"scene {rec.id} has no {what}")
        out.append(rec)
    return out


def _stack_palette_codes(codes: np.ndarray, classes, palette: ras.ClassPalette) -> np.ndarray:
    """Remap stack-order class codes to palette-order codes (sentinels pass through)."""
    lut = np.arange(256, dtype=np.uint8)
    for idx, name in enumerate(classes):
        lut[idx] = palette.index_of(name)
    return lut[codes]


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_synth(args) -> int:
    palette = _load_palette(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not (0.0 < args.ceiling_lo <= args.ceiling_hi <= 1.0):
        raise ValueError(f"ceiling range must satisfy 0 < lo <= hi <= 1, got "
                         f"[{args.ceiling_lo}, {args.ceiling_hi}]")
    outputs = []
    for index in range(args.scenes):
        scene_seed = int(np.random.SeedSequence((args.seed, index)).generate_state(1)[0])
        ceil_rng = np.random.default_rng(np.random.SeedSequence((args.seed, index, 0xCE)))
        ceilings = tuple(round(float(v), 6) for v in
                         ceil_rng.uniform(args.ceiling_lo, args.ceiling_hi, args.classes))
        spec = dsets.SynthSpec(seed=scene_seed, width=args.size, height=args.size,
                               classes=args.classes, region_model=args.region,
                               blur_radius=args.blur, noise=args.noise,
                               ceilings=ceilings, image_noise=args.image_noise)
        image, gt_mask, cams, image_labels = dsets.synthesize(spec, palette)
        conf = dsets.synthetic_confidences(spec, image_labels, cams.classes)
        scene_id = f"{index:04d}"
        paths = {
            "sat": out / f"{scene_id}_sat.png",
            "mask": out / f"{scene_id}_mask.png",
            "cams": out / f"{scene_id}_cams.wcam",
            "conf": out / f"{scene_id}_conf.json",
            "labels": out / f"{scene_id}_labels.json",
        }
        ras.write_image(paths["sat"], image)
        ras.write_image(paths["mask"], ras.rgb_encode(gt_mask, palette))
        ras.write_stack(paths["cams"], cams)
        with open(paths["conf"], "w", encoding="utf-8") as f:
            json.dump(conf, f, sort_keys=True, indent=2)
            f.write("\n")
        with open(paths["labels"], "w", encoding="utf-8") as f:
            json.dump({"classes": sorted(image_labels)}, f, sort_keys=True, indent=2)
            f.write("\n")
        outputs.extend(paths.values())
    cfg_dict = {"scenes": args.scenes, "size": args.size, "classes": args.classes,
                "region": args.region, "blur": args.blur, "noise": args.noise,
                "image_noise": args.image_noise, "seed": args.seed,
                "ceiling_lo": args.ceiling_lo, "ceiling_hi": args.ceiling_hi}
    write_manifest(out, "synth", cfg_dict, {}, outputs)
    print(f"synth: wrote {args.scenes} scenes to {out}")
    return 0


def stage_tile(args) -> int:
    palette = _load_palette(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = dsets.scan(args.data)
    if not records:
        raise FileNotFoundError(f"no scenes found under {args.data}")
    inputs, outputs = {}, []
    for rec in records:
        image = ras.read_image(rec.image_path)
        inputs[f"data/{rec.image_path.name}"] = rec.image_path
        grid, image_tiles = dsets.tile(image, args.size)
        mask_tiles = cam_tiles = None
        scene_labels = None
        if rec.mask_path is not None:
            inputs[f"data/{rec.mask_path.name}"] = rec.mask_path
            gt = ras.rgb_decode(ras.read_image(rec.mask_path), palette)
            _, mask_tiles = dsets.tile(ras.Raster(gt.codes[:, :, None]), args.size)
            if args.labels_per == "scene":
                scene_labels = dsets.reduce_to_image_labels(gt, palette, args.min_fraction)
        if rec.cams_path is not None:
            inputs[f"data/{rec.cams_path.name}"] = rec.cams_path
            stack = ras.read_stack(rec.cams_path)
            cam_tiles = []
            for y, x in grid.origins:
                piece = stack.planes[:, y:min(y + args.size, stack.height),
                                     x:min(x + args.size, stack.width)]
                cam_tiles.append(ras.ScoreStack(np.ascontiguousarray(piece), stack.classes))
        for t, piece in enumerate(image_tiles):
            r, c = t // grid.cols, t % grid.cols
            tile_id = f"{rec.id}_r{r:02d}c{c:02d}"
            sat = out / f"{tile_id}_sat.png"
            ras.write_image(sat, piece)
            outputs.append(sat)
            if mask_tiles is not None:
                codes = ras.LabelMap(mask_tiles[t].data[:, :, 0])
                mask_out = out / f"{tile_id}_mask.png"
                ras.write_image(mask_out, ras.rgb_encode(codes, palette))
                outputs.append(mask_out)
                labels = (scene_labels if scene_labels is not None
                          else dsets.reduce_to_image_labels(codes, palette, args.min_fraction))
                labels_out = out / f"{tile_id}_labels.json"
                with open(labels_out, "w", encoding="utf-8") as f:
                    json.dump({"classes": sorted(labels)}, f, sort_keys=True, indent=2)
                    f.write("\n")
                outputs.append(labels_out)
            if cam_tiles is not None:
                cams_out = out / f"{tile_id}_cams.wcam"
                ras.write_stack(cams_out, cam_tiles[t])
                outputs.append(cams_out)
    cfg_dict = {"size": args.size, "labels_per": args.labels_per,
                "min_fraction": args.min_fraction}
    write_manifest(out, "tile", cfg_dict, inputs, outputs)
    print(f"tile: wrote {len(outputs)} files to {out}")
    return 0


def _bg_cam_scene(rec, out, cfg, palette, use_confidence):
    stack = ras.read_stack(rec.cams_path)
    if stack.planes.max() > 1.0:
        # Raw activation stacks get per-class max normalization; stacks
        # already in [0, 1] are treated as calibrated and pass through.
        stack = normalize(stack)
    used = [rec.cams_path]
    if use_confidence:
        with open(rec.conf_path, "r", encoding="utf-8") as f:
            conf = json.load(f)
        used.append(rec.conf_path)
        stack, _ = select_cams(stack, conf, cfg.conf_threshold)
    else:
        if rec.labels is not None:
            present = set(rec.labels)
            used.append(rec.image_path.parent / f"{rec.id}_labels.json")
        else:
            gt = ras.rgb_decode(ras.read_image(rec.mask_path), palette)
            present = dsets.reduce_to_image_labels(gt, palette, cfg.min_fraction)
            used.append(rec.mask_path)
        stack = suppress_absent(stack, present & set(stack.classes))
    bg = background_map(stack, cfg.alpha)
    cams_out = out / f"{rec.id}_cams.wcam"
    bg_out = out / f"{rec.id}_bg.wcam"
    ras.write_stack(cams_out, stack)
    ras.write_plane(bg_out, bg, "background")
    return used, [cams_out, bg_out]


def stage_bg_cam(args) -> int:
    cfg = resolve_config(args)
    palette = _load_palette(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = _scenes_with(dsets.scan(args.data), "cams_path", "score stack (_cams.wcam)")
    if not records:
        raise FileNotFoundError(f"no scenes found under {args.data}")
    if args.no_image_labels:
        records = _scenes_with(records, "conf_path", "confidence file (_conf.json)")
    else:
        for rec in records:
            if rec.labels is None and rec.mask_path is None:
                raise FileNotFoundError(
                    f"scene {rec.id} has neither _labels.json nor _mask.png; "
                    f"use --no-image-labels to gate on confidences instead")
    results = _map_scenes(
        lambda rec: _bg_cam_scene(rec, out, cfg, palette, args.no_image_labels),
        records, args.jobs)
    inputs = {f"data/{p.name}": p for used, _ in results for p in used}
    outputs = [p for _, written in results for p in written]
    write_manifest(out, "bg-cam", cfg.manifest_dict(), inputs, outputs)
    print(f"bg-cam: processed {len(records)} scenes "
          f"(alpha={format_alpha(cfg.alpha)}, "
          f"{'confidence-gated' if args.no_image_labels else 'image-label suppression'})")
    return 0


def _afflabels_scene(rec_id, cams_dir, out, cfg, palette):
    cams_path = cams_dir / f"{rec_id}_cams.wcam"
    stack = ras.read_stack(cams_path)
    gh, gw = aff.grid_shape(stack.height, stack.width, cfg.stride)
    grid_stack = ras.resample_stack(stack, gw, gh, "bilinear")
    labels = prs.confident_labels(grid_stack, cfg.dual())
    pair_set = prs.enumerate_pairs(labels, cfg.gamma)
    pairs_out = out / f"{rec_id}_pairs.wcam"
    prs.write_pairs(pairs_out, pair_set)
    view_out = out / f"{rec_id}_conflabels.png"
    palette_codes = _stack_palette_codes(labels.codes, grid_stack.classes, palette)
    ras.write_image(view_out, ras.rgb_encode(ras.LabelMap(palette_codes), palette))
    return [cams_path], [pairs_out, view_out]


def _cam_scene_ids(cams_dir: Path) -> list[str]:
    ids = sorted(p.name[:-len("_cams.wcam")] for p in Path(cams_dir).glob("*_cams.wcam"))
    if not ids:
        raise FileNotFoundError(f"no *_cams.wcam files under {cams_dir}")
    return ids


def stage_afflabels(args) -> int:
    cfg = resolve_config(args)
    palette = _load_palette(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cams_dir = Path(args.cams)
    ids = _cam_scene_ids(cams_dir)
    results = _map_scenes(
        lambda sid: _afflabels_scene(sid, cams_dir, out, cfg, palette), ids, args.jobs)
    inputs = {f"cams/{p.name}": p for used, _ in results for p in used}
    outputs = [p for _, written in results for p in written]
    write_manifest(out, "afflabels", cfg.manifest_dict(), inputs, outputs)
    print(f"afflabels: wrote pair sets for {len(ids)} scenes")
    return 0


def stage_train_aff(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = dsets.scan(args.data)
    if args.split:
        wanted = set(dsets.read_split(args.split))
        records = [rec for rec in records if rec.id in wanted]
    pairs_dir = Path(args.pairs)
    dataset = []
    inputs = {}
    skipped = 0
    for rec in records:
        pairs_path = pairs_dir / f"{rec.id}_pairs.wcam"
        if not pairs_path.exists():
            raise FileNotFoundError(f"no pair file for scene {rec.id}: {pairs_path}")
        pair_set = prs.read_pairs(pairs_path)
        if pair_set.total == 0:
            skipped += 1
            continue
        image = ras.image_to_unit_float(ras.read_image(rec.image_path))
        dataset.append((image, pair_set))
        inputs[f"data/{rec.image_path.name}"] = rec.image_path
        inputs[f"pairs/{pairs_path.name}"] = pairs_path
    if args.split:
        inputs["split"] = Path(args.split)
    if not dataset:
        raise ValueError("no scenes with non-empty pair sets to train on")
    params = aff.init_params(cfg.seed, stride=cfg.stride)
    params, trace = aff.train(dataset, cfg.train_config(), cfg.weights(), init=params)
    ckpt = out / "aff_params.wcam"
    aff.save_params(ckpt, params)
    trace_path = out / "train_trace.csv"
    with open(trace_path, "w", encoding="utf-8") as f:
        f.write("epoch,total,loss_fg,loss_bg,loss_neg\n")
        for epoch, row in enumerate(trace):
            f.write(f"{epoch},{row.total:.8e},{row.fg:.8e},{row.bg:.8e},{row.neg:.8e}\n")
    write_manifest(out, "train-aff", cfg.manifest_dict(), inputs, [ckpt, trace_path])
    last = trace[-1].total if trace else float("nan")
    print(f"train-aff: {len(dataset)} scenes ({skipped} empty skipped), "
          f"{cfg.epochs} epochs, final loss {last:.6f}")
    return 0


def _infer_scene(rec, out, params, cfg):
    image = ras.image_to_unit_float(ras.read_image(rec.image_path))
    feat = aff.forward(params, image)
    sparse = aff.sparse_affinity(feat, cfg.gamma)
    aff_out = out / f"{rec.id}_aff.wcam"
    rw.write_sparse(aff_out, sparse)
    return [rec.image_path], [aff_out]


def stage_infer_aff(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = dsets.scan(args.data)
    if not records:
        raise FileNotFoundError(f"no scenes found under {args.data}")
    params = aff.load_params(args.model)
    results = _map_scenes(lambda rec: _infer_scene(rec, out, params, cfg),
                          records, args.jobs)
    inputs = {f"data/{p.name}": p for used, _ in results for p in used}
    inputs["model/aff_params.wcam"] = Path(args.model)
    outputs = [p for _, written in results for p in written]
    write_manifest(out, "infer-aff", cfg.manifest_dict(), inputs, outputs)
    print(f"infer-aff: wrote affinity graphs for {len(records)} scenes")
    return 0


def _propagate_scene(rec_id, cams_dir, aff_dir, out, cfg):
    cams_path = cams_dir / f"{rec_id}_cams.wcam"
    bg_path = cams_dir / f"{rec_id}_bg.wcam"
    aff_path = aff_dir / f"{rec_id}_aff.wcam"
    stack = ras.read_stack(cams_path)
    bg = ras.read_plane(bg_path)
    sparse = rw.read_sparse(aff_path)
    transition = rw.build_transition(sparse, cfg.beta)
    grid_stack = ras.resample_stack(stack, sparse.width, sparse.height, "bilinear")
    grid_bg = ras.resample(bg, sparse.width, sparse.height, "bilinear")
    walked, walked_bg = rw.propagate_stack(transition, grid_stack, grid_bg, cfg.walk_config())
    full = ras.resample_stack(walked, stack.width, stack.height, "bilinear")
    full_bg = ras.resample(walked_bg, stack.width, stack.height, "bilinear")
    rw_out = out / f"{rec_id}_rwcams.wcam"
    bg_out = out / f"{rec_id}_rwbg.wcam"
    ras.write_stack(rw_out, full)
    ras.write_plane(bg_out, full_bg.astype(np.float32), "background")
    return [cams_path, bg_path, aff_path], [rw_out, bg_out]


def stage_propagate(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cams_dir, aff_dir = Path(args.cams), Path(args.aff)
    ids = _cam_scene_ids(cams_dir)
    results = _map_scenes(
        lambda sid: _propagate_scene(sid, cams_dir, aff_dir, out, cfg), ids, args.jobs)
    inputs = {}
    for used, _ in results:
        inputs[f"cams/{used[0].name}"] = used[0]
        inputs[f"cams/{used[1].name}"] = used[1]
        inputs[f"aff/{used[2].name}"] = used[2]
    outputs = [p for _, written in results for p in written]
    write_manifest(out, "propagate", cfg.manifest_dict(), inputs, outputs)
    print(f"propagate: walked {len(ids)} scenes (beta={cfg.beta}, iters={cfg.iters})")
    return 0


def _labels_scene(rec_id, walk_dir, out, palette):
    cams_path = walk_dir / f"{rec_id}_rwcams.wcam"
    bg_path = walk_dir / f"{rec_id}_rwbg.wcam"
    stack = ras.read_stack(cams_path)
    bg = ras.read_plane(bg_path)
    labels = assign_labels(stack, bg)
    codes = _stack_palette_codes(labels.codes, stack.classes, palette)
    pred_out = out / f"{rec_id}_pred.png"
    ras.write_image(pred_out, ras.rgb_encode(ras.LabelMap(codes), palette))
    return [cams_path, bg_path], [pred_out]


def stage_labels(args) -> int:
    cfg = resolve_config(args)
    palette = _load_palette(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    walk_dir = Path(args.walk)
    ids = sorted(p.name[:-len("_rwcams.wcam")] for p in walk_dir.glob("*_rwcams.wcam"))
    if not ids:
        raise FileNotFoundError(f"no *_rwcams.wcam files under {walk_dir}")
    results = _map_scenes(
        lambda sid: _labels_scene(sid, walk_dir, out, palette), ids, args.jobs)
    inputs = {f"walk/{p.name}": p for used, _ in results for p in used}
    outputs = [p for _, written in results for p in written]
    write_manifest(out, "labels", cfg.manifest_dict(), inputs, outputs)
    print(f"labels: wrote predictions for {len(ids)} scenes")
    return 0


def _eval_scene(rec, pred_dir, palette, ignore):
    pred_path = pred_dir / f"{rec.id}_pred.png"
    pred = ras.rgb_decode(ras.read_image(pred_path), palette)
    gt = ras.rgb_decode(ras.read_image(rec.mask_path), palette)
    codes = pred.codes.copy()
    unknown = palette.unknown_index
    if unknown is not None:
        # Predicted Unknown shares (0,0,0) with the BACKGROUND sentinel; both
        # mean "no claim", so score them as unlabeled.
        codes[codes == unknown] = ras.BACKGROUND
    cm = ev.confusion(ras.LabelMap(codes), gt, len(palette), ignore)
    return rec.id, pred_path, cm


def stage_eval(args) -> int:
    cfg = resolve_config(args)
    palette = _load_palette(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pred_dir = Path(args.pred)
    records = _scenes_with(dsets.scan(args.data), "mask_path", "ground-truth mask")
    if not records:
        raise FileNotFoundError(f"no scenes found under {args.data}")
    unknown = palette.unknown_index
    ignore = {unknown} if unknown is not None else set()
    results = _map_scenes(
        lambda rec: _eval_scene(rec, pred_dir, palette, ignore), records, args.jobs)

    def show(v):
        return "na" if v is None else f"{v:.6f}"

    total = ev.empty_confusion(len(palette))
    csv_path = out / "metrics.csv"
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("scene,precision,recall,miou\n")
        for rec_id, _, cm in results:
            total = total + cm
            p, r = ev.precision_recall(cm)
            _, m = ev.miou(cm)
            f.write(f"{rec_id},{show(p)},{show(r)},{show(m)}\n")
        p, r = ev.precision_recall(total)
        _, m = ev.miou(total)
        f.write(f"TOTAL,{show(p)},{show(r)},{show(m)}\n")
    report = ev.format_report(total, palette.names)
    report_path = out / "report.txt"
    with open(report_path, "w", encoding="utf-8") as f:
        f.write(report + "\n")
    inputs = {f"pred/{pred.name}": pred for _, pred, _ in results}
    for rec in records:
        inputs[f"data/{rec.mask_path.name}"] = rec.mask_path
    write_manifest(out, "eval", cfg.manifest_dict(), inputs, [csv_path, report_path])
    print(report)
    return 0


def stage_pipeline(args) -> int:
    cfg = resolve_config(args)  # validate knobs before any stage runs
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dirs = {name: out / name for name in
            ("cams", "afflabels", "model", "affinity", "walk", "labels", "eval")}

    ns = argparse.Namespace(**vars(args))
    ns.out = dirs["cams"]
    stage_bg_cam(ns)

    ns = argparse.Namespace(**vars(args))
    ns.cams, ns.out = dirs["cams"], dirs["afflabels"]
    stage_afflabels(ns)

    ns = argparse.Namespace(**vars(args))
    ns.pairs, ns.out, ns.split = dirs["afflabels"], dirs["model"], None
    stage_train_aff(ns)

    ns = argparse.Namespace(**vars(args))
    ns.model, ns.out = dirs["model"] / "aff_params.wcam", dirs["affinity"]
    stage_infer_aff(ns)

    ns = argparse.Namespace(**vars(args))
    ns.cams, ns.aff, ns.out = dirs["cams"], dirs["affinity"], dirs["walk"]
    stage_propagate(ns)

    ns = argparse.Namespace(**vars(args))
    ns.walk, ns.out = dirs["walk"], dirs["labels"]
    stage_labels(ns)

    have_masks = all(rec.mask_path is not None for rec in dsets.scan(args.data))
    if have_masks:
        ns = argparse.Namespace(**vars(args))
        ns.pred, ns.out = dirs["labels"], dirs["eval"]
        stage_eval(ns)
    else:
        print("pipeline: no ground-truth masks, skipping eval stage")
    print(f"pipeline: finished (alpha={format_alpha(cfg.alpha)}) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="wsseg",
                     description="Synthesize and evaluate segmentation labels from "
                                 "class-activation score maps.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, func):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--palette", type=Path, default=None,
                       help="palette file overriding the DeepGlobe classes")
        p.add_argument("--jobs", type=int, default=1,
                       help="scene-level worker threads (outputs do not depend on it)")
        return p

    p = add("synth", "generate a synthetic dataset", stage_synth)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--region", choices=("voronoi", "rects"), default="voronoi")
    p.add_argument("--blur", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--image-noise", type=float, default=0.05)
    p.add_argument("--ceiling-lo", type=float, default=1.0,
                   help="lower bound for per-class score ceilings drawn per scene")
    p.add_argument("--ceiling-hi", type=float, default=1.0,
                   help="upper bound for per-class score ceilings")
    p.add_argument("--seed", type=int, default=0)

    p = add("tile", "split scenes into fixed-size patches", stage_tile)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--size", type=int, default=306)
    p.add_argument("--labels-per", choices=("patch", "scene"), default="patch",
                   help="derive image-level labels per patch or per full scene")
    p.add_argument("--min-fraction", type=float, default=0.0)

    p = add("bg-cam", "normalize score stacks, gate classes, emit background planes",
            stage_bg_cam)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-image-labels", action="store_true",
                   help="gate classes on classifier confidences instead of image labels")
    add_knob_flags(p)

    p = add("afflabels", "confident-region labels and training pairs", stage_afflabels)
    p.add_argument("--cams", type=Path, required=True, help="bg-cam output directory")
    p.add_argument("--out", type=Path, required=True)
    add_knob_flags(p)

    p = add("train-aff", "train the affinity feature head", stage_train_aff)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--pairs", type=Path, required=True, help="afflabels output directory")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", type=Path, default=None,
                   help="newline-delimited scene ids to train on")
    add_knob_flags(p)

    p = add("infer-aff", "extract sparse affinity graphs", stage_infer_aff)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True, help="aff_params.wcam checkpoint")
    p.add_argument("--out", type=Path, required=True)
    add_knob_flags(p)

    p = add("propagate", "random-walk score planes along affinities", stage_propagate)
    p.add_argument("--cams", type=Path, required=True, help="bg-cam output directory")
    p.add_argument("--aff", type=Path, required=True, help="infer-aff output directory")
    p.add_argument("--out", type=Path, required=True)
    add_knob_flags(p)

    p = add("labels", "argmax-decode walked scores into label rasters", stage_labels)
    p.add_argument("--walk", type=Path, required=True, help="propagate output directory")
    p.add_argument("--out", type=Path, required=True)
    add_knob_flags(p)

    p = add("eval", "score predictions against ground-truth masks", stage_eval)
    p.add_argument("--pred", type=Path, required=True, help="labels output directory")
    p.add_argument("--data", type=Path, required=True, help="dataset with _mask.png files")
    p.add_argument("--out", type=Path, required=True)
    add_knob_flags(p)

    p = add("pipeline", "run every stage end to end", stage_pipeline)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-image-labels", action="store_true",
                   help="direct segmentation: gate classes on confidences")
    add_knob_flags(p)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except aff.TrainingError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 3


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
