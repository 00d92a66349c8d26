"""Training objective: block-average, selected-region, flattening and combiner terms.

Every per-point quantity is a softmax probability vector. Region summaries
(z, h, n) are *means* of those vectors, so each lies on the simplex and the
logarithms below always see arguments in (0, 1].
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tensor, ops
from .selector import PointLogits, SelectionResult

log = logging.getLogger(__name__)

FLATTEN_EPS = 1e-6


@dataclass
class LossWeights:
    block: float = 1.0
    selected: float = 0.0
    flatten: float = 5.0
    combiner: float = 1.0

    def __post_init__(self):
        for name in ("block", "selected", "flatten", "combiner"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")


@dataclass
class LossBundle:
    block: Tensor
    selected: Tensor
    flatten: Tensor
    combiner: Tensor
    total: Tensor
    weights: LossWeights
    z: list[Tensor] = field(default_factory=list)
    h: list[Tensor] = field(default_factory=list)
    n: list[Tensor] = field(default_factory=list)

    def scalars(self) -> dict[str, float]:
        return {
            "loss_b": float(self.block.data),
            "loss_s": float(self.selected.data),
            "loss_n": float(self.flatten.data),
            "loss_c": float(self.combiner.data),
            "loss_total": float(self.total.data),
        }


def _check_labels(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got {labels.min()}..{labels.max()}")
    return labels


def _onehot(labels: np.ndarray, num_classes: int) -> Tensor:
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return Tensor(out)


def _nll_of_mean(dist: Tensor, labels: np.ndarray) -> Tensor:
    """Batch mean of ``-log dist[label]`` for (N, C') distributions."""
    picked = ops.sum(ops.mul(dist, _onehot(labels, dist.shape[1])), axis=1)
    return ops.scale(ops.sum(ops.log(picked)), -1.0 / labels.size)


def _region_mean(pl: PointLogits, indices: np.ndarray) -> Tensor:
    """Mean probability vector over the points ``indices`` (N, m) of each image."""
    n, hw, c = pl.probs.shape
    m = indices.shape[1]
    flat = (indices + np.arange(n)[:, None] * hw).reshape(-1)
    rows = ops.gather_rows(ops.reshape(pl.probs, (n * hw, c)), flat)
    return ops.mean(ops.reshape(rows, (n, m, c)), axis=1)


def _sum_terms(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return total


def block_average_loss(pls: list[PointLogits], labels) -> tuple[Tensor, list[Tensor]]:
    """Sum over blocks of cross-entropy on the all-point mean distribution."""
    labels = _check_labels(labels, pls[0].probs.shape[-1])
    zs = [ops.mean(pl.probs, axis=1) for pl in pls]
    return _sum_terms([_nll_of_mean(z, labels) for z in zs]), zs


def selected_loss(pls: list[PointLogits], srs: list[SelectionResult], labels) -> tuple[Tensor, list[Tensor]]:
    labels = _check_labels(labels, pls[0].probs.shape[-1])
    hs = []
    for pl, sr in zip(pls, srs):
        if sr.selected_indices.shape[1] == 0:
            raise ValueError(f"selected_loss: block {sr.block_index} has an empty selection")
        hs.append(_region_mean(pl, sr.selected_indices))
    return _sum_terms([_nll_of_mean(h, labels) for h in hs]), hs


def flatten_loss(pls: list[PointLogits], srs: list[SelectionResult]) -> tuple[Tensor, list[Tensor]]:
    """``sum_l sum_i -log(1 - n_l[i])`` with n_l the mean dropped-point distribution.

    Minimised when every class gets 1/C' of the dropped mass.
    """
    terms, ns = [], []
    for pl, sr in zip(pls, srs):
        if sr.dropped_indices.shape[1] == 0:
            log.warning("flatten_loss: block %d has no dropped points; term is 0", sr.block_index)
            continue
        nl = _region_mean(pl, sr.dropped_indices)
        ns.append(nl)
        safe = ops.clip(nl, FLATTEN_EPS, 1.0 - FLATTEN_EPS)
        per_image = ops.sum(ops.log(ops.add_scalar(ops.scale(safe, -1.0), 1.0)), axis=1)
        terms.append(ops.scale(ops.sum(per_image), -1.0 / per_image.shape[0]))
    if not terms:
        return Tensor(0.0), ns
    return _sum_terms(terms), ns


def combiner_loss(scores: Tensor, labels) -> Tensor:
    labels = _check_labels(labels, scores.shape[-1])
    return ops.cross_entropy(scores, labels)


def total_loss(
    block: Tensor | None,
    selected: Tensor | None,
    flatten: Tensor | None,
    combiner: Tensor | None,
    weights: LossWeights,
    z=(),
    h=(),
    n=(),
) -> LossBundle:
    """Weighted sum ``lb*Lb + ls*Ls + ln*Ln + lc*Lc``; absent terms count as 0."""
    parts = [t if t is not None else Tensor(0.0) for t in (block, selected, flatten, combiner)]
    lams = (weights.block, weights.selected, weights.flatten, weights.combiner)
    total = _sum_terms([ops.scale(t, lam) for t, lam in zip(parts, lams)])
    return LossBundle(*parts, total=total, weights=weights, z=list(z), h=list(h), n=list(n))
