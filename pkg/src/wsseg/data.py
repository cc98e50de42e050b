"""Dataset handling: directory scanning, tiling/stitching, image-level label
reduction, train/val splitting, and a seeded synthetic scene generator.

Scene layout on disk: ``<id>_sat.jpg`` (or .jpeg/.png) next to an optional
``<id>_mask.png``; pipelines add ``<id>_cams.wcam``, ``<id>_conf.json`` and
``<id>_labels.json``. Split manifests are newline-delimited id files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cams import normalize
from .raster import ClassPalette, LabelMap, Raster, ScoreStack

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = ("_sat.jpg", "_sat.jpeg", "_sat.png")


@dataclass(frozen=True)
class SceneRecord:
    id: str
    image_path: Path
    mask_path: Path | None = None
    labels: frozenset[str] | None = None
    cams_path: Path | None = None
    conf_path: Path | None = None


@dataclass(frozen=True)
class TileGrid:
    """Row-major tiling of a source raster; edge tiles shrink when the tile
    size does not divide the source dims, and the grid is flagged clamped."""

    source_width: int
    source_height: int
    tile_size: int
    rows: int
    cols: int
    origins: tuple[tuple[int, int], ...]  # (y, x) per tile, row-major
    clamped: bool

    def __len__(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of the synthetic scene generator; fully determined by ``seed``."""

    seed: int
    width: int = 64
    height: int = 64
    classes: int = 3
    region_model: str = "voronoi"  # or "rects"
    blur_radius: int = 4
    noise: float = 0.3
    ceilings: tuple[float, ...] = field(default_factory=tuple)
    image_noise: float = 0.05

    def __post_init__(self):
        if self.region_model not in ("voronoi", "rects"):
            raise ValueError(f"unknown region model {self.region_model!r}")
        if self.classes < 1:
            raise ValueError("need at least one class")
        if self.blur_radius < 0 or self.noise < 0 or self.image_noise < 0:
            raise ValueError("corruption parameters must be >= 0")
        if self.ceilings and len(self.ceilings) != self.classes:
            raise ValueError(f"{len(self.ceilings)} ceilings for {self.classes} classes")


def scan(root) -> list[SceneRecord]:
    """Scenes under ``root``, sorted by id; orphan masks warn, never fail."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root is not a directory: {root}")
    records = {}
    for path in sorted(root.iterdir()):
        for suffix in IMAGE_SUFFIXES:
            if path.name.endswith(suffix):
                scene_id = path.name[:-len(suffix)]
                mask = root / f"{scene_id}_mask.png"
                cams = root / f"{scene_id}_cams.wcam"
                conf = root / f"{scene_id}_conf.json"
                labels_file = root / f"{scene_id}_labels.json"
                labels = None
                if labels_file.exists():
                    with open(labels_file, "r", encoding="utf-8") as f:
                        labels = frozenset(json.load(f)["classes"])
                records[scene_id] = SceneRecord(
                    id=scene_id,
                    image_path=path,
                    mask_path=mask if mask.exists() else None,
                    labels=labels,
                    cams_path=cams if cams.exists() else None,
                    conf_path=conf if conf.exists() else None,
                )
                break
    known = set(records)
    for path in sorted(root.glob("*_mask.png")):
        scene_id = path.name[:-len("_mask.png")]
        if scene_id not in known:
            log.warning("orphan mask without image: %s", path)
    return [records[k] for k in sorted(records)]


# ---------------------------------------------------------------------------
# Tiling
# ---------------------------------------------------------------------------


def plan_tiles(width: int, height: int, size: int) -> TileGrid:
    if size < 1:
        raise ValueError(f"tile size must be >= 1, got {size}")
    rows = -(-height // size)
    cols = -(-width // size)
    origins = []
    for r in range(rows):
        for c in range(cols):
            origins.append((r * size, c * size))
    clamped = (height % size != 0) or (width % size != 0)
    return TileGrid(width, height, size, rows, cols, tuple(origins), clamped)


def tile(raster: Raster, size: int) -> tuple[TileGrid, list[Raster]]:
    grid = plan_tiles(raster.width, raster.height, size)
    tiles = []
    for y, x in grid.origins:
        piece = raster.data[y:min(y + size, raster.height), x:min(x + size, raster.width)]
        tiles.append(Raster(np.ascontiguousarray(piece)))
    return grid, tiles


def stitch(grid: TileGrid, tiles: list[Raster]) -> Raster:
    if len(tiles) != len(grid):
        raise ValueError(f"grid expects {len(grid)} tiles, got {len(tiles)}")
    channels = tiles[0].channels
    out = np.empty((grid.source_height, grid.source_width, channels), dtype=tiles[0].data.dtype)
    for (y, x), piece in zip(grid.origins, tiles):
        expect_h = min(grid.tile_size, grid.source_height - y)
        expect_w = min(grid.tile_size, grid.source_width - x)
        if piece.data.shape[:2] != (expect_h, expect_w):
            raise ValueError(f"tile at ({y}, {x}) has shape {piece.data.shape[:2]}, "
                             f"expected {(expect_h, expect_w)}")
        out[y:y + expect_h, x:x + expect_w] = piece.data
    return Raster(out)


# ---------------------------------------------------------------------------
# Image-level labels and splits
# ---------------------------------------------------------------------------


def reduce_to_image_labels(mask: LabelMap, palette: ClassPalette,
                           min_fraction: float = 0.0) -> set[str]:
    """Classes whose pixel fraction strictly exceeds ``min_fraction``.

    The Unknown class is never reported.
    """
    if not (0.0 <= min_fraction < 1.0):
        raise ValueError(f"min_fraction must be in [0, 1), got {min_fraction}")
    counts = np.bincount(mask.codes.ravel(), minlength=256)
    total = mask.codes.size
    out = set()
    for idx, name in enumerate(palette.names):
        if name == "Unknown":
            continue
        if counts[idx] / total > min_fraction:
            out.add(name)
    return out


def split(records: list[SceneRecord], train_count: int, seed: int):
    """Seeded shuffle, then the first ``train_count`` records become training."""
    if train_count > len(records):
        raise ValueError(f"train_count {train_count} exceeds {len(records)} records")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    train = [records[i] for i in order[:train_count]]
    val = [records[i] for i in order[train_count:]]
    return train, val


def write_split(path, records: list[SceneRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(rec.id + "\n")


def read_split(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip()]


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------


def _box_blur(plane: np.ndarray, radius: int) -> np.ndarray:
    """Separable mean filter with edge-truncated (renormalized) windows."""
    if radius == 0:
        return plane.astype(np.float32)

    def blur_axis(arr):
        n = arr.shape[0]
        csum = np.zeros((n + 1,) + arr.shape[1:], dtype=np.float64)
        np.cumsum(arr, axis=0, out=csum[1:])
        lo = np.maximum(np.arange(n) - radius, 0)
        hi = np.minimum(np.arange(n) + radius + 1, n)
        window = (hi - lo).reshape(-1, *([1] * (arr.ndim - 1)))
        return (csum[hi] - csum[lo]) / window

    out = blur_axis(plane.astype(np.float64))
    out = blur_axis(out.swapaxes(0, 1)).swapaxes(0, 1)
    return out.astype(np.float32)


def _voronoi_regions(rng, width: int, height: int, classes: int) -> np.ndarray:
    points = rng.uniform(0, 1, size=(classes, 2)) * np.array([height, width])
    yy, xx = np.mgrid[0:height, 0:width]
    dist = (yy[None] - points[:, 0, None, None]) ** 2 + (xx[None] - points[:, 1, None, None]) ** 2
    return np.argmin(dist, axis=0).astype(np.uint8)


def _rect_regions(rng, width: int, height: int, classes: int) -> np.ndarray:
    codes = np.zeros((height, width), dtype=np.uint8)
    for cls in range(1, classes):
        rh = int(rng.integers(height // 4, max(height // 4 + 1, 3 * height // 4)))
        rw = int(rng.integers(width // 4, max(width // 4 + 1, 3 * width // 4)))
        y0 = int(rng.integers(0, height - rh + 1))
        x0 = int(rng.integers(0, width - rw + 1))
        codes[y0:y0 + rh, x0:x0 + rw] = cls
    return codes


def synthesize(spec: SynthSpec, palette: ClassPalette):
    """Deterministic scene: region ground truth, textured image, corrupted CAMs.

    CAM planes start as one-hot ground truth, get box-blurred, perturbed by
    uniform noise, clamped at zero, normalized per class, then scaled by the
    per-class ceilings. Returns (image, gt_mask, cams, image_labels).
    """
    if spec.classes > len(palette):
        raise ValueError(f"{spec.classes} classes exceed palette size {len(palette)}")
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0xD5)))
    h, w = spec.height, spec.width
    if spec.region_model == "voronoi":
        gt = _voronoi_regions(rng, w, h, spec.classes)
    else:
        gt = _rect_regions(rng, w, h, spec.classes)
    gt_mask = LabelMap(gt)

    base = palette.colors[:spec.classes].astype(np.float32) / 255.0
    img = base[gt]
    if spec.image_noise > 0:
        img = img + rng.uniform(-spec.image_noise, spec.image_noise,
                                size=img.shape).astype(np.float32)
    img = np.clip(img, 0.0, 1.0)
    image = Raster(np.round(img * 255.0).astype(np.uint8))

    planes = np.zeros((spec.classes, h, w), dtype=np.float32)
    for cls in range(spec.classes):
        planes[cls] = _box_blur((gt == cls).astype(np.float32), spec.blur_radius)
    if spec.noise > 0:
        planes = planes + rng.uniform(-spec.noise, spec.noise,
                                      size=planes.shape).astype(np.float32)
    planes = np.maximum(planes, 0.0)
    cams = normalize(ScoreStack(planes, tuple(palette.names[:spec.classes])))
    if spec.ceilings:
        scaled = cams.planes * np.asarray(spec.ceilings, np.float32)[:, None, None]
        cams = ScoreStack(scaled, cams.classes)

    image_labels = reduce_to_image_labels(gt_mask, palette, 0.0)
    return image, gt_mask, cams, image_labels


def synthetic_confidences(spec: SynthSpec, image_labels: set[str],
                          class_names: tuple[str, ...]) -> dict[str, float]:
    """Stand-in classifier confidences: high for present classes, low otherwise."""
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0xC0)))
    out = {}
    for name in class_names:
        jitter = float(rng.uniform(0.0, 0.1))
        out[name] = round(0.88 + jitter, 6) if name in image_labels else round(0.02 + jitter, 6)
    return out
