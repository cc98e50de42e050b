"""Confident-region labels and radius-limited training pairs.

A conservative two-pass rule turns normalized score stacks into per-pixel
labels (class / BACKGROUND / NEUTRAL), and all close-by pixel pairs that
avoid NEUTRAL are enumerated and partitioned into same-class foreground,
same-background, and differing-class negatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels, wcam
from .cams import assign_labels, background_map, validate_alpha
from .raster import BACKGROUND, NEUTRAL, LabelMap, ScoreStack


@dataclass(frozen=True)
class DualAlpha:
    """Background exponents for the two confidence passes.

    The foreground pass uses the smaller exponent (stronger background, so a
    class must beat it decisively); the background pass uses the larger one.
    """

    fg: float
    bg: float

    def __post_init__(self):
        validate_alpha(self.fg)
        validate_alpha(self.bg)
        if not (self.fg <= self.bg):
            raise ValueError(f"require alpha_fg <= alpha_bg, got {self.fg} > {self.bg}")


@dataclass(frozen=True)
class PairSet:
    """Unordered cell pairs (i < j, row-major indices) within radius gamma."""

    height: int
    width: int
    gamma: float
    fg: np.ndarray   # (n, 2) int64, same-class pairs
    bg: np.ndarray   # (m, 2) int64, both-background pairs
    neg: np.ndarray  # (k, 2) int64, differing-code pairs

    def counts(self) -> tuple[int, int, int]:
        return self.fg.shape[0], self.bg.shape[0], self.neg.shape[0]

    @property
    def total(self) -> int:
        return sum(self.counts())


def confident_labels(stack: ScoreStack, dual: DualAlpha) -> LabelMap:
    """Two-pass confident labeling; everything unclaimed becomes NEUTRAL.

    Pass one assigns a class only where it beats the strong background plane;
    pass two marks background only where even the weak background plane wins.
    With fg <= bg exponents the two claims cannot overlap.
    """
    fg_pass = assign_labels(stack, background_map(stack, dual.fg))
    bg_pass = assign_labels(stack, background_map(stack, dual.bg))
    codes = np.full(fg_pass.codes.shape, NEUTRAL, dtype=np.uint8)
    class_won = fg_pass.codes != BACKGROUND
    codes[class_won] = fg_pass.codes[class_won]
    codes[bg_pass.codes == BACKGROUND] = BACKGROUND
    return LabelMap(codes)


def enumerate_pairs(labels: LabelMap, gamma: float) -> PairSet:
    """All unordered pixel pairs closer than gamma with no NEUTRAL endpoint."""
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    dr, dc = kernels.neighbor_offsets(gamma, forward_only=True)
    fg_i, fg_j, bg_i, bg_j, ng_i, ng_j = kernels.partition_pairs(
        labels.codes, dr, dc, np.uint8(BACKGROUND), np.uint8(NEUTRAL))
    return PairSet(
        height=labels.height,
        width=labels.width,
        gamma=float(gamma),
        fg=np.stack([fg_i, fg_j], axis=1) if fg_i.size else np.empty((0, 2), np.int64),
        bg=np.stack([bg_i, bg_j], axis=1) if bg_i.size else np.empty((0, 2), np.int64),
        neg=np.stack([ng_i, ng_j], axis=1) if ng_i.size else np.empty((0, 2), np.int64),
    )


def sample_pairs(pair_set: PairSet, cap: int, seed: int) -> PairSet:
    """Uniformly subsample each partition to at most ``cap`` pairs.

    Partitions are sampled independently with child seeds derived from
    (seed, partition index), so the draw for one partition never shifts
    another's.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    parts = []
    for k, arr in enumerate((pair_set.fg, pair_set.bg, pair_set.neg)):
        if arr.shape[0] <= cap:
            parts.append(arr)
            continue
        rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(k,)))
        idx = rng.choice(arr.shape[0], size=cap, replace=False)
        idx.sort()
        parts.append(arr[idx])
    return PairSet(pair_set.height, pair_set.width, pair_set.gamma, *parts)


def write_pairs(path, pair_set: PairSet) -> None:
    wcam.write_pairs_arrays(path, pair_set.height, pair_set.width, pair_set.gamma,
                            pair_set.fg, pair_set.bg, pair_set.neg)


def read_pairs(path) -> PairSet:
    h, w, gamma, fg, bg, neg = wcam.read_pairs_arrays(path)
    return PairSet(h, w, gamma, fg, bg, neg)
