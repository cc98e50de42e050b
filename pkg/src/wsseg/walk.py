"""Random-walk propagation of score planes over a sparse affinity graph."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels, wcam
from .raster import ScoreStack


@dataclass(frozen=True)
class SparseAffinity:
    """Symmetric CSR matrix of pairwise cell affinities in (0, 1], unit diagonal."""

    height: int
    width: int
    indptr: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @property
    def cells(self) -> int:
        return self.height * self.width

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def validate(self) -> None:
        n = self.cells
        if self.indptr.shape[0] != n + 1:
            raise ValueError(f"indptr length {self.indptr.shape[0]} != cells+1 ({n + 1})")
        if self.vals.size and (self.vals.min() <= 0 or self.vals.max() > 1
                               or not np.isfinite(self.vals).all()):
            raise ValueError("affinity values must be finite and in (0, 1]")
        row_sizes = np.diff(self.indptr)
        if (row_sizes < 1).any():
            raise ValueError("every row must hold at least its diagonal entry")


@dataclass(frozen=True)
class SparseTransition:
    """Row-stochastic CSR matrix; values kept in float64."""

    height: int
    width: int
    indptr: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @property
    def cells(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class WalkConfig:
    beta: float = 8.0
    iterations: int = 16

    def __post_init__(self):
        if self.beta < 1:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")


def build_transition(aff: SparseAffinity, beta: float = 8.0) -> SparseTransition:
    """Row-normalize element-wise powered affinities into a transition matrix."""
    if beta < 1:
        raise ValueError(f"beta must be >= 1, got {beta}")
    aff.validate()
    powered = np.power(aff.vals.astype(np.float64), float(beta))
    row_sums = np.add.reduceat(powered, aff.indptr[:-1])
    if (row_sums <= 0).any():
        raise RuntimeError("empty transition row; affinity diagonal invariant broken")
    vals = powered / np.repeat(row_sums, np.diff(aff.indptr))
    return SparseTransition(aff.height, aff.width, aff.indptr, aff.cols, vals)


def propagate(transition: SparseTransition, plane: np.ndarray, iterations: int) -> np.ndarray:
    """Apply the transition matrix ``iterations`` times to a flattened plane.

    Accumulation is 64-bit per row; each application is clipped to the input
    range, which a row-stochastic product preserves mathematically but float
    rounding can overshoot by an ulp.
    """
    if iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {iterations}")
    shape = plane.shape
    flat = plane.reshape(-1)
    if flat.shape[0] != transition.cells:
        raise ValueError(f"plane has {flat.shape[0]} cells, transition expects {transition.cells}")
    dtype = plane.dtype
    cur = flat.astype(np.float64)
    for _ in range(iterations):
        lo, hi = cur.min(), cur.max()
        cur = kernels.csr_matvec(transition.indptr, transition.cols, transition.vals, cur)
        np.clip(cur, lo, hi, out=cur)
    return cur.astype(dtype).reshape(shape)


def propagate_stack(transition: SparseTransition, stack: ScoreStack, bg: np.ndarray,
                    cfg: WalkConfig) -> tuple[ScoreStack, np.ndarray]:
    """Propagate every class plane and the background plane with the same walk."""
    if (stack.height, stack.width) != (transition.height, transition.width):
        raise ValueError(f"stack grid {(stack.height, stack.width)} does not match "
                         f"transition grid {(transition.height, transition.width)}")
    planes = np.stack([propagate(transition, p, cfg.iterations) for p in stack.planes])
    out_bg = propagate(transition, bg, cfg.iterations)
    return ScoreStack(planes.astype(np.float32), stack.classes), out_bg


def write_sparse(path, aff: SparseAffinity) -> None:
    wcam.write_sparse_arrays(path, aff.height, aff.width, aff.indptr, aff.cols, aff.vals)


def read_sparse(path) -> SparseAffinity:
    h, w, indptr, cols, vals = wcam.read_sparse_arrays(path)
    return SparseAffinity(h, w, indptr, cols, vals)
