"""Segmentation-label synthesis from class-activation score maps.

Pipeline: normalize per-class score planes, derive a background plane,
extract confident-region pixel pairs, train a small affinity feature head,
propagate scores by random walk over the sparse affinity graph, and decode
the result into label rasters. Includes a synthetic dataset generator,
DeepGlobe-style tiling, and precision/recall/mIoU evaluation.
"""

from .cams import (assign_labels, background_map, normalize, parse_alpha,
                   select_cams, suppress_absent)
from .data import (SceneRecord, SynthSpec, TileGrid, reduce_to_image_labels,
                   scan, split, stitch, synthesize, tile)
from .metrics import ConfusionMatrix, confusion, miou, precision_recall
from .model import (FeatureHeadParams, LossWeights, TrainConfig, TrainingError,
                    affinity, forward, init_params, loss, loss_grad,
                    sparse_affinity, train)
from .pairs import DualAlpha, PairSet, confident_labels, enumerate_pairs, sample_pairs
from .raster import (BACKGROUND, NEUTRAL, ClassPalette, LabelMap, Raster,
                     ScoreStack, deepglobe_palette, read_stack, resample,
                     rgb_decode, rgb_encode, write_stack)
from .walk import (SparseAffinity, SparseTransition, WalkConfig,
                   build_transition, propagate, propagate_stack)

__version__ = "0.1.0"
