"""Per-pixel score-map transforms: normalization, background scoring,
class suppression, confidence gating, and argmax label assignment."""

from __future__ import annotations

import math

import numpy as np

from .raster import BACKGROUND, LabelMap, ScoreStack

INF = math.inf


def parse_alpha(text: str) -> float:
    """Parse a background exponent; the literal token ``inf`` disables it."""
    value = INF if text.strip().lower() in ("inf", "infinity") else float(text)
    validate_alpha(value)
    return value


def validate_alpha(alpha: float) -> None:
    if not (alpha > 0):
        raise ValueError(f"alpha must be > 0 (or inf), got {alpha}")


def format_alpha(alpha: float) -> str:
    if math.isinf(alpha):
        return "inf"
    return repr(float(alpha))


def normalize(stack: ScoreStack) -> ScoreStack:
    """Scale each class plane by its own maximum; all-zero planes stay zero."""
    planes = stack.planes.copy()
    for i in range(planes.shape[0]):
        top = planes[i].max()
        if top > 0:
            planes[i] /= top
    return ScoreStack(planes, stack.classes)


def _check_normalized(stack: ScoreStack) -> None:
    if stack.planes.max(initial=0.0) > 1.0:
        raise ValueError("stack is not normalized: scores above 1 found")


def background_map(stack: ScoreStack, alpha: float) -> np.ndarray:
    """Score plane marking pixels that no class claims: (1 - max score)^alpha.

    ``alpha = inf`` is the exact limit: 0 wherever any class has positive
    score, 1 where every class scores 0.
    """
    validate_alpha(alpha)
    _check_normalized(stack)
    best = stack.planes.max(axis=0)
    if math.isinf(alpha):
        return (best == 0).astype(np.float32)
    return np.power(np.float32(1.0) - best, np.float32(alpha))


def suppress_absent(stack: ScoreStack, present: set[str]) -> ScoreStack:
    """Zero the planes of every class not in ``present``."""
    unknown = set(present) - set(stack.classes)
    if unknown:
        raise ValueError(f"present classes not in stack: {sorted(unknown)}")
    planes = stack.planes.copy()
    for i, name in enumerate(stack.classes):
        if name not in present:
            planes[i] = 0.0
    return ScoreStack(planes, stack.classes)


def select_cams(stack: ScoreStack, confidence: dict[str, float],
                threshold: float) -> tuple[ScoreStack, set[str]]:
    """Keep only classes whose classifier confidence reaches the threshold."""
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    missing = [c for c in stack.classes if c not in confidence]
    if missing:
        raise ValueError(f"confidence vector missing classes: {missing}")
    for name, value in confidence.items():
        if not (0.0 <= value <= 1.0):
            raise ValueError(f"confidence for {name} outside [0, 1]: {value}")
    kept = {c for c in stack.classes if confidence[c] >= threshold}
    return suppress_absent(stack, kept), kept


def assign_labels(stack: ScoreStack, bg: np.ndarray) -> LabelMap:
    """Per-pixel argmax over class planes and the background plane.

    BACKGROUND wins only where it strictly exceeds every class score; class
    ties resolve to the lowest class index.
    """
    if bg.shape != (stack.height, stack.width):
        raise ValueError(f"background plane {bg.shape} does not match "
                         f"stack {(stack.height, stack.width)}")
    best = np.argmax(stack.planes, axis=0).astype(np.uint8)
    best_score = np.take_along_axis(stack.planes, best[None].astype(np.int64), axis=0)[0]
    codes = np.where(bg > best_score, np.uint8(BACKGROUND), best)
    return LabelMap(codes.astype(np.uint8))
