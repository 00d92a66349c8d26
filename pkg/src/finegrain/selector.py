"""Per-point classification and confidence-ranked top-k selection.

Layout convention: point-wise tensors are ``(batch, H*W, channels)`` with
points in row-major spatial order, so point ``s`` sits at ``divmod(s, W)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backbone import FeatureMap
from .diffcore import Linear, Tensor, ops

PAPER_NUM_SELECTS = (256, 128, 64, 32)


@dataclass
class SelectorConfig:
    num_selects: list[int] | None = None  # None -> desk-scale rule


def desk_scale_num_selects(spatial_sizes: list[int], defaults=PAPER_NUM_SELECTS) -> list[int]:
    """``min(default, ceil(H*W/2))`` per block; blocks past the defaults reuse the last one."""
    out = []
    for i, side in enumerate(spatial_sizes):
        base = defaults[min(i, len(defaults) - 1)]
        out.append(min(base, math.ceil(side * side / 2)))
    return out


@dataclass
class PointLogits:
    block_index: int
    logits: Tensor  # (N, HW, C')
    probs: Tensor  # softmax over the class axis
    hw: tuple[int, int]

    @property
    def max_probs(self) -> np.ndarray:
        return self.probs.data.max(axis=-1)

    def as_maps(self) -> np.ndarray:
        """Logits as (N, C', H, W)."""
        n, _, c = self.logits.shape
        return self.logits.data.transpose(0, 2, 1).reshape(n, c, *self.hw)


@dataclass
class SelectionResult:
    block_index: int
    hw: tuple[int, int]
    selected_indices: np.ndarray  # (N, k) ordered by confidence
    dropped_indices: np.ndarray  # (N, HW - k), ascending
    selected_features: Tensor  # (N, k, C)
    confidences: np.ndarray  # (N, k) max-class prob of each selected point
    keep: np.ndarray = field(default=None)  # (N, k) bool; False once filtered out
    confidence_threshold: float | None = None

    def __post_init__(self):
        if self.keep is None:
            self.keep = np.ones(self.selected_indices.shape, dtype=bool)

    @property
    def num_selects(self) -> int:
        return self.selected_indices.shape[1]

    @property
    def mask(self) -> np.ndarray:
        """(N, H, W) uint8, 1 = selected."""
        n = self.selected_indices.shape[0]
        flat = np.zeros((n, self.hw[0] * self.hw[1]), dtype=np.uint8)
        rows = np.repeat(np.arange(n), self.num_selects)
        flat[rows, self.selected_indices.reshape(-1)] = self.keep.reshape(-1)
        return flat.reshape(n, *self.hw)

    def kept(self, image: int) -> np.ndarray:
        return self.selected_indices[image][self.keep[image]]


def classify_points(fmap: FeatureMap, head: Linear) -> PointLogits:
    feats = fmap.features
    n, c, h, w = feats.shape
    if c != head.d_in:
        raise ops.ShapeError(f"classify_points: feature width {c} but head expects {head.d_in}")
    points = ops.reshape(ops.transpose(feats, (0, 2, 3, 1)), (n, h * w, c))
    logits = head(points)
    return PointLogits(fmap.block_index, logits, ops.softmax(logits, axis=-1), (h, w))


def point_features(fmap: FeatureMap) -> Tensor:
    """(N*H*W, C) row view of a feature map, rows in image-then-row-major order."""
    n, c, h, w = fmap.features.shape
    return ops.reshape(ops.transpose(fmap.features, (0, 2, 3, 1)), (n * h * w, c))


def rank_points(max_probs: np.ndarray) -> np.ndarray:
    """Per row: point indices by descending confidence, ties by ascending index."""
    return np.argsort(-max_probs, axis=-1, kind="stable")


def select(pl: PointLogits, fmap: FeatureMap, k: int) -> SelectionResult:
    n, hw, _ = pl.probs.shape
    if not 1 <= k <= hw:
        raise ValueError(f"select: num_selects {k} outside [1, {hw}] for block {pl.block_index}")
    if fmap.features.shape[0] != n or fmap.hw != pl.hw:
        raise ops.ShapeError(
            f"select: feature map {fmap.features.shape} does not match point logits {pl.probs.shape}"
        )
    conf = pl.max_probs
    order = rank_points(conf)
    chosen = order[:, :k]
    dropped = np.sort(order[:, k:], axis=1)
    flat = (chosen + np.arange(n)[:, None] * hw).reshape(-1)
    feats = ops.gather_rows(point_features(fmap), flat)
    feats = ops.reshape(feats, (n, k, fmap.channels))
    return SelectionResult(
        block_index=pl.block_index,
        hw=pl.hw,
        selected_indices=chosen,
        dropped_indices=dropped,
        selected_features=feats,
        confidences=np.take_along_axis(conf, chosen, axis=1),
    )


def threshold_filter(sr: SelectionResult, pl: PointLogits, tau: float) -> SelectionResult:
    """Drop selected points whose top-class probability is below ``tau``.

    Evaluation-time refinement: the result may be empty for some images.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {tau}")
    conf = np.take_along_axis(pl.max_probs, sr.selected_indices, axis=1)
    return SelectionResult(
        block_index=sr.block_index,
        hw=sr.hw,
        selected_indices=sr.selected_indices,
        dropped_indices=sr.dropped_indices,
        selected_features=sr.selected_features,
        confidences=sr.confidences,
        keep=sr.keep & (conf >= tau),
        confidence_threshold=tau,
    )
