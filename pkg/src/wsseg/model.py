"""Trainable pixel-affinity features: a small convolutional head, the
pairwise affinity loss with its analytic gradient, a deterministic SGD
trainer, and sparse affinity-matrix extraction.

The head maps an RGB image to a D-dimensional feature per grid cell (grid =
image dims / stride, rounded up). The affinity between two cells is
exp(-L1 distance) of their features; training pulls same-label pairs
together and pushes differing-label pairs apart.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import kernels, wcam
from .pairs import PairSet, sample_pairs
from .walk import SparseAffinity

_PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


class TrainingError(RuntimeError):
    """Raised when the loss turns non-finite during training."""

    def __init__(self, epoch: int, image_index: int, value: float):
        self.epoch = epoch
        self.image_index = image_index
        super().__init__(f"training diverged at epoch {epoch}, image {image_index}: "
                         f"loss = {value}")


@dataclass(frozen=True)
class LossWeights:
    """Per-term divisors of the pair loss; reciprocals must sum to one."""

    fg: float = 6.0
    bg: float = 2.0
    neg: float = 3.0

    def __post_init__(self):
        for name, v in (("fg", self.fg), ("bg", self.bg), ("neg", self.neg)):
            if v <= 0:
                raise ValueError(f"loss weight {name} must be > 0, got {v}")
        total = 1.0 / self.fg + 1.0 / self.bg + 1.0 / self.neg
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"reciprocal loss weights must sum to 1, got {total!r} "
                             f"for ({self.fg}, {self.bg}, {self.neg})")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 200
    pair_cap: int = 4096
    seed: int = 0
    eps: float = 1e-7

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.pair_cap < 1:
            raise ValueError(f"pair_cap must be >= 1, got {self.pair_cap}")
        if not (0.0 < self.eps <= 1e-3):
            raise ValueError(f"eps must be in (0, 1e-3], got {self.eps}")


@dataclass(frozen=True)
class FeatureHeadParams:
    """Weights of the fixed three-layer head.

    conv 3x3 (3 -> c1) + ReLU, conv 3x3 stride-s (c1 -> c2) + ReLU,
    conv 1x1 linear (c2 -> depth). Weight layout (KH, KW, Cin, Cout).
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    stride: int

    def __post_init__(self):
        c1 = self.w1.shape[3]
        c2 = self.w2.shape[3]
        depth = self.w3.shape[3]
        expect = {"w1": (3, 3, 3, c1), "b1": (c1,), "w2": (3, 3, c1, c2), "b2": (c2,),
                  "w3": (1, 1, c2, depth), "b3": (depth,)}
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def depth(self) -> int:
        return self.w3.shape[3]

    def tensor_items(self):
        return [(name, getattr(self, name)) for name in _PARAM_NAMES]

    def astype(self, dtype) -> "FeatureHeadParams":
        kwargs = {name: arr.astype(dtype) for name, arr in self.tensor_items()}
        return FeatureHeadParams(stride=self.stride, **kwargs)


class LossBreakdown(NamedTuple):
    total: float
    fg: float
    bg: float
    neg: float


def init_params(seed: int, c1: int = 16, c2: int = 32, depth: int = 16,
                stride: int = 2) -> FeatureHeadParams:
    """Seed-determined uniform(-sqrt(2/fan_in), +sqrt(2/fan_in)) init, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0)))

    def mk(kh, kw, cin, cout):
        bound = np.sqrt(2.0 / (kh * kw * cin))
        return rng.uniform(-bound, bound, size=(kh, kw, cin, cout)).astype(np.float32)

    return FeatureHeadParams(
        w1=mk(3, 3, 3, c1), b1=np.zeros(c1, np.float32),
        w2=mk(3, 3, c1, c2), b2=np.zeros(c2, np.float32),
        w3=mk(1, 1, c2, depth), b3=np.zeros(depth, np.float32),
        stride=stride)


def affinity(f_i: np.ndarray, f_j: np.ndarray) -> float:
    """exp of the negative L1 distance between two feature vectors."""
    f_i = np.asarray(f_i)
    f_j = np.asarray(f_j)
    if f_i.shape != f_j.shape:
        raise ValueError(f"feature depth mismatch: {f_i.shape} vs {f_j.shape}")
    return float(np.exp(-np.abs(f_i.astype(np.float64) - f_j.astype(np.float64)).sum()))


def grid_shape(height: int, width: int, stride: int) -> tuple[int, int]:
    return -(-height // stride), -(-width // stride)


def _check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got {image.shape}")
    if image.dtype.kind != "f":
        raise ValueError(f"image must be float, got {image.dtype}")


def _forward_trace(params: FeatureHeadParams, image: np.ndarray):
    z1 = kernels.conv2d(image, params.w1, params.b1, 1, 1)
    a1 = np.maximum(z1, 0)
    z2 = kernels.conv2d(a1, params.w2, params.b2, params.stride, 1)
    a2 = np.maximum(z2, 0)
    feat = kernels.conv2d(a2, params.w3, params.b3, 1, 0)
    return z1, a1, z2, a2, feat


def forward(params: FeatureHeadParams, image: np.ndarray) -> np.ndarray:
    """Feature map (ceil(H/stride), ceil(W/stride), depth) for a float RGB image."""
    _check_image(image)
    return _forward_trace(params, image)[4]


def _pair_distances(flat: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return np.abs(flat[pairs[:, 0]] - flat[pairs[:, 1]]).sum(axis=1, dtype=np.float64)


def _validate_pairs(feat: np.ndarray, pair_set: PairSet) -> None:
    if feat.shape[:2] != (pair_set.height, pair_set.width):
        raise ValueError(f"pair grid {(pair_set.height, pair_set.width)} does not match "
                         f"feature grid {feat.shape[:2]}")
    if pair_set.total == 0:
        raise ValueError("all pair partitions are empty")


def loss(feat: np.ndarray, pair_set: PairSet, weights: LossWeights,
         eps: float = 1e-7) -> LossBreakdown:
    """Mean negative-log affinity losses over the three pair partitions.

    Affinities are clamped to [eps, 1-eps] before the log; a partition with
    no pairs contributes zero (its weight is not redistributed).
    """
    _validate_pairs(feat, pair_set)
    flat = feat.reshape(-1, feat.shape[2])
    terms = []
    for part, positive in ((pair_set.fg, True), (pair_set.bg, True), (pair_set.neg, False)):
        if part.shape[0] == 0:
            terms.append(0.0)
            continue
        w = np.exp(-_pair_distances(flat, part))
        w = np.clip(w, eps, 1.0 - eps)
        if positive:
            terms.append(float(-np.log(w).mean()))
        else:
            terms.append(float(-np.log1p(-w).mean()))
    total = terms[0] / weights.fg + terms[1] / weights.bg + terms[2] / weights.neg
    return LossBreakdown(total, terms[0], terms[1], terms[2])


def _feat_grad(flat: np.ndarray, pair_set: PairSet, weights: LossWeights,
               eps: float) -> np.ndarray:
    """Gradient of the total loss with respect to the flattened features."""
    gflat = np.zeros_like(flat)
    for part, positive, div in ((pair_set.fg, True, weights.fg),
                                (pair_set.bg, True, weights.bg),
                                (pair_set.neg, False, weights.neg)):
        n = part.shape[0]
        if n == 0:
            continue
        w = np.exp(-_pair_distances(flat, part))
        active = (w > eps) & (w < 1.0 - eps)
        if positive:
            coef = np.where(active, 1.0 / (n * div), 0.0)
        else:
            denom = np.where(active, (1.0 - w) * n * div, 1.0)
            coef = np.where(active, -w / denom, 0.0)
        coef = coef.astype(flat.dtype)
        kernels.pair_sign_grads(gflat, part[:, 0], part[:, 1], coef, flat)
    return gflat


def loss_grad(params: FeatureHeadParams, image: np.ndarray, pair_set: PairSet,
              weights: LossWeights, eps: float = 1e-7):
    """Total loss and its exact gradient for every head parameter.

    Subgradient conventions: sign(0) = 0 for the L1 kernel, ReLU'(0) = 0, and
    affinities at the clamp boundary pass no gradient.
    """
    _check_image(image)
    z1, a1, z2, a2, feat = _forward_trace(params, image)
    _validate_pairs(feat, pair_set)
    breakdown = loss(feat, pair_set, weights, eps)
    flat = feat.reshape(-1, feat.shape[2])
    gfeat = _feat_grad(flat, pair_set, weights, eps).reshape(feat.shape)

    ga2, gw3, gb3 = kernels.conv2d_grads(a2, params.w3, gfeat, 1, 0)
    gz2 = ga2 * (z2 > 0)
    ga1, gw2, gb2 = kernels.conv2d_grads(a1, params.w2, gz2, params.stride, 1)
    gz1 = ga1 * (z1 > 0)
    _, gw1, gb1 = kernels.conv2d_grads(image, params.w1, gz1, 1, 1)
    grads = {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2, "w3": gw3, "b3": gb3}
    return grads, breakdown


def train(dataset, cfg: TrainConfig, weights: LossWeights,
          init: FeatureHeadParams | None = None):
    """Momentum SGD over (image, PairSet) items; fully seed-deterministic.

    Images are visited in a reshuffled order each epoch; each partition is
    resampled to ``pair_cap`` pairs per visit with a seed derived from
    (seed, epoch, image index). Returns the final parameters and a per-epoch
    trace of mean (total, fg, bg, neg) losses.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    for image, _ in dataset:
        _check_image(image)
    params = init if init is not None else init_params(cfg.seed)
    params = params.astype(np.float32)
    velocity = {name: np.zeros_like(arr) for name, arr in params.tensor_items()}
    trace = []
    for epoch in range(cfg.epochs):
        order_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1, epoch)))
        order = order_rng.permutation(len(dataset))
        epoch_losses = np.zeros(4, dtype=np.float64)
        for idx in order:
            image, pair_set = dataset[idx]
            pair_seed = int(np.random.SeedSequence(
                (cfg.seed, 2, epoch, int(idx))).generate_state(1)[0])
            batch = sample_pairs(pair_set, cfg.pair_cap, pair_seed)
            grads, breakdown = loss_grad(params, image, batch, weights, cfg.eps)
            if not np.isfinite(breakdown.total):
                raise TrainingError(epoch, int(idx), breakdown.total)
            updated = {}
            for name, arr in params.tensor_items():
                v = velocity[name]
                v *= np.float32(cfg.momentum)
                v += grads[name].astype(np.float32)
                updated[name] = arr - np.float32(cfg.lr) * v
            params = replace(params, **updated)
            epoch_losses += np.asarray(breakdown, dtype=np.float64)
        trace.append(LossBreakdown(*(epoch_losses / len(dataset))))
    return params, trace


def sparse_affinity(feat: np.ndarray, gamma: float) -> SparseAffinity:
    """Affinity of every cell pair closer than gamma, as a symmetric CSR matrix.

    The diagonal is present with value 1 (zero self-distance).
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    h, w, depth = feat.shape
    dr, dc = kernels.neighbor_offsets(gamma, include_center=True)
    flat = np.ascontiguousarray(feat.reshape(-1, depth))
    indptr, cols, vals = kernels.affinity_csr(flat, h, w, dr, dc)
    vals = vals.astype(np.float32)
    # exp(-d) underflows to exactly 0 in float32 for d > ~88; keep the
    # stored values strictly positive
    np.maximum(vals, np.finfo(np.float32).tiny, out=vals)
    return SparseAffinity(h, w, indptr, cols, vals)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_params(path, params: FeatureHeadParams) -> None:
    tensors = dict(params.tensor_items())
    tensors["stride"] = np.array(float(params.stride), dtype=np.float32)
    wcam.write_checkpoint(path, tensors)


def load_params(path) -> FeatureHeadParams:
    tensors = wcam.read_checkpoint(path)
    try:
        stride = int(tensors.pop("stride"))
        return FeatureHeadParams(stride=stride, **tensors)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"not a feature-head checkpoint: {path} ({exc})")
