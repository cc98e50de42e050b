"""Raster value types, the class palette, color codecs, and plane resampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import wcam

BACKGROUND = 254
NEUTRAL = 255

# Emitted label rasters use these colors for the sentinel codes. BACKGROUND
# shares (0,0,0) with the DeepGlobe "Unknown" entry by design: both mean
# "no claim", and decoding (0,0,0) always yields Unknown.
BACKGROUND_COLOR = (0, 0, 0)
NEUTRAL_COLOR = (128, 128, 128)

DEEPGLOBE_CLASSES = (
    ("Urban", (0, 255, 255)),
    ("Agriculture", (255, 255, 0)),
    ("Rangeland", (255, 0, 255)),
    ("Forest", (0, 255, 0)),
    ("Water", (0, 0, 255)),
    ("Barren", (255, 255, 255)),
    ("Unknown", (0, 0, 0)),
)


@dataclass(frozen=True)
class Raster:
    """Image data, row-major (height, width, channels), uint8 or float32."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"raster data must be 3-d (H, W, C), got {self.data.shape}")
        if self.height < 1 or self.width < 1:
            raise ValueError(f"raster dims must be >= 1, got {self.data.shape}")
        if self.data.dtype not in (np.uint8, np.float32):
            raise ValueError(f"raster dtype must be uint8 or float32, got {self.data.dtype}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class codes; BACKGROUND and NEUTRAL are reserved sentinels."""

    codes: np.ndarray

    def __post_init__(self):
        if self.codes.ndim != 2 or self.codes.dtype != np.uint8:
            raise ValueError(f"codes must be 2-d uint8, got {self.codes.shape} {self.codes.dtype}")
        if self.codes.shape[0] < 1 or self.codes.shape[1] < 1:
            raise ValueError(f"label dims must be >= 1, got {self.codes.shape}")

    @property
    def height(self) -> int:
        return self.codes.shape[0]

    @property
    def width(self) -> int:
        return self.codes.shape[1]


@dataclass(frozen=True)
class ScoreStack:
    """One non-negative float32 score plane per class, (classes, H, W)."""

    planes: np.ndarray
    classes: tuple[str, ...]

    def __post_init__(self):
        planes = self.planes
        if planes.ndim != 3:
            raise ValueError(f"planes must be (classes, H, W), got {planes.shape}")
        if planes.shape[0] != len(self.classes) or len(self.classes) < 1:
            raise ValueError(f"{planes.shape[0]} planes for {len(self.classes)} classes")
        if planes.dtype != np.float32:
            raise ValueError(f"planes must be float32, got {planes.dtype}")
        if not np.isfinite(planes).all():
            raise ValueError("score planes contain non-finite values")
        if planes.min(initial=0.0) < 0:
            raise ValueError("score planes contain negative values")

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


@dataclass(frozen=True)
class ClassPalette:
    """Ordered class name <-> RGB association used for mask encode/decode."""

    names: tuple[str, ...]
    colors: np.ndarray  # (C, 3) uint8
    _lookup: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        colors = np.asarray(self.colors, dtype=np.uint8)
        if colors.shape != (len(self.names), 3):
            raise ValueError(f"colors shape {colors.shape} does not match {len(self.names)} names")
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be pairwise distinct")
        keys = [tuple(int(v) for v in c) for c in colors]
        if len(set(keys)) != len(keys):
            raise ValueError("palette colors must be pairwise distinct")
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "_lookup", {k: i for i, k in enumerate(keys)})

    def __len__(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        return self.names.index(name)

    @property
    def unknown_index(self) -> int | None:
        return self.names.index("Unknown") if "Unknown" in self.names else None


def deepglobe_palette() -> ClassPalette:
    names = tuple(n for n, _ in DEEPGLOBE_CLASSES)
    colors = np.array([c for _, c in DEEPGLOBE_CLASSES], dtype=np.uint8)
    return ClassPalette(names, colors)


def load_palette(path) -> ClassPalette:
    """Palette file: one ``name r g b`` line per class, '#' comments allowed."""
    names, colors = [], []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 'name r g b', got {line!r}")
            names.append(parts[0])
            colors.append([int(v) for v in parts[1:]])
    return ClassPalette(tuple(names), np.array(colors, dtype=np.uint8))


# ---------------------------------------------------------------------------
# RGB encode / decode
# ---------------------------------------------------------------------------


def rgb_encode(labels: LabelMap, palette: ClassPalette) -> Raster:
    """Render a label map to an RGB raster using palette + sentinel colors."""
    codes = labels.codes
    n = len(palette)
    table = np.zeros((256, 3), dtype=np.uint8)
    table[:n] = palette.colors
    table[BACKGROUND] = BACKGROUND_COLOR
    table[NEUTRAL] = NEUTRAL_COLOR
    bad = (codes >= n) & (codes != BACKGROUND) & (codes != NEUTRAL)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValueError(f"label code {codes[y, x]} at ({y}, {x}) outside palette of {n} classes")
    return Raster(table[codes])


def rgb_decode(raster: Raster, palette: ClassPalette, nearest: bool = False) -> LabelMap:
    """Map an RGB raster back to class codes.

    Exact palette colors win; the NEUTRAL sentinel color decodes to NEUTRAL.
    Unmatched colors raise unless ``nearest`` maps them to the closest
    palette entry (squared RGB distance, lowest index on ties).
    """
    if raster.channels != 3 or raster.data.dtype != np.uint8:
        raise ValueError(f"decode needs 3-channel uint8 input, got "
                         f"{raster.channels} channels {raster.data.dtype}")
    rgb = raster.data.astype(np.int64)
    key = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
    out = np.full(key.shape, NEUTRAL, dtype=np.uint8)
    matched = np.zeros(key.shape, dtype=bool)
    for idx, color in enumerate(palette.colors):
        k = (int(color[0]) << 16) | (int(color[1]) << 8) | int(color[2])
        hit = key == k
        out[hit] = idx
        matched |= hit
    neutral_key = (NEUTRAL_COLOR[0] << 16) | (NEUTRAL_COLOR[1] << 8) | NEUTRAL_COLOR[2]
    hit = ~matched & (key == neutral_key)
    out[hit] = NEUTRAL
    matched |= hit
    if not matched.all():
        if nearest:
            miss = ~matched
            pix = rgb[miss].astype(np.float64)
            dist = ((pix[:, None, :] - palette.colors[None, :, :].astype(np.float64)) ** 2).sum(axis=2)
            out[miss] = np.argmin(dist, axis=1).astype(np.uint8)
        else:
            y, x = np.argwhere(~matched)[0]
            r, g, b = raster.data[y, x]
            raise ValueError(f"color ({r}, {g}, {b}) at pixel ({y}, {x}) is not in the palette "
                             f"(nearest-color decode disabled)")
    return LabelMap(out)


# ---------------------------------------------------------------------------
# Resampling (center-aligned sampling, clamped at edges)
# ---------------------------------------------------------------------------


def _source_coords(n_out: int, n_in: int) -> np.ndarray:
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    return np.clip(src, 0.0, n_in - 1.0)


def _interp_axis0(plane: np.ndarray, n_out: int, mode: str) -> np.ndarray:
    n_in = plane.shape[0]
    src = _source_coords(n_out, n_in)
    if mode == "nearest":
        idx = np.floor(src + 0.5).astype(np.int64)
        return plane[np.clip(idx, 0, n_in - 1)]
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    t = (src - lo).astype(plane.dtype)
    a, b = plane[lo], plane[hi]
    out = a + (b - a) * t.reshape(-1, *([1] * (plane.ndim - 1)))
    # Rounding can push a 2-tap convex combination past its endpoints by one
    # ulp; clamping restores the range invariant exactly.
    return np.clip(out, np.minimum(a, b), np.maximum(a, b))


def resample(plane: np.ndarray, new_width: int, new_height: int, mode: str = "bilinear") -> np.ndarray:
    """Resize a 2-d float plane with center-aligned nearest or bilinear sampling."""
    if new_width < 1 or new_height < 1:
        raise ValueError(f"target dims must be >= 1, got {new_width}x{new_height}")
    if mode not in ("nearest", "bilinear"):
        raise ValueError(f"unknown resample mode {mode!r}")
    if plane.ndim != 2:
        raise ValueError(f"plane must be 2-d, got shape {plane.shape}")
    out = _interp_axis0(plane, new_height, mode)
    out = _interp_axis0(out.T, new_width, mode).T
    return np.ascontiguousarray(out)


def resample_labels(labels: LabelMap, new_width: int, new_height: int) -> LabelMap:
    """Nearest-neighbor resize of a label map (codes are never blended)."""
    idx_r = np.floor(_source_coords(new_height, labels.height) + 0.5).astype(np.int64)
    idx_c = np.floor(_source_coords(new_width, labels.width) + 0.5).astype(np.int64)
    idx_r = np.clip(idx_r, 0, labels.height - 1)
    idx_c = np.clip(idx_c, 0, labels.width - 1)
    return LabelMap(labels.codes[np.ix_(idx_r, idx_c)])


def resample_stack(stack: ScoreStack, new_width: int, new_height: int,
                   mode: str = "bilinear") -> ScoreStack:
    planes = np.stack([resample(p, new_width, new_height, mode) for p in stack.planes])
    return ScoreStack(planes.astype(np.float32), stack.classes)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def write_stack(path, stack: ScoreStack) -> None:
    wcam.write_stack_arrays(path, stack.planes, stack.classes)


def read_stack(path) -> ScoreStack:
    planes, names = wcam.read_stack_arrays(path)
    return ScoreStack(planes, tuple(names))


def write_plane(path, plane: np.ndarray, name: str = "plane") -> None:
    wcam.write_stack_arrays(path, plane[None, :, :], [name])


def read_plane(path) -> np.ndarray:
    planes, _ = wcam.read_stack_arrays(path)
    if planes.shape[0] != 1:
        raise ValueError(f"expected a single-plane file, found {planes.shape[0]} planes")
    return planes[0]


def read_image(path) -> Raster:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return Raster(arr)


def write_image(path, raster: Raster) -> None:
    data = raster.data
    if data.dtype != np.uint8:
        raise ValueError("write_image expects uint8 data")
    if raster.channels == 1:
        Image.fromarray(data[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(data, mode="RGB").save(path)


def image_to_unit_float(raster: Raster) -> np.ndarray:
    """uint8 RGB -> float32 (H, W, 3) in [0, 1]."""
    return raster.data.astype(np.float32) / np.float32(255.0)
