"""Backbone + pyramid + selectors + combiner, with the ablation switches."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from .backbone import FPN, Backbone, BackboneConfig, FeatureMap
from .combiner import Combiner, CombinerConfig
from .diffcore import Linear, Module, Tensor, ops
from .selector import (
    PointLogits,
    SelectionResult,
    SelectorConfig,
    classify_points,
    desk_scale_num_selects,
    select,
)


@dataclass
class ModelConfig:
    num_classes: int | None = None  # None -> taken from the dataset
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    combiner: CombinerConfig = field(default_factory=CombinerConfig)
    fpn_enabled: bool = True
    selector_enabled: bool = True
    combiner_enabled: bool = True

    def resolved_num_selects(self) -> list[int]:
        sides = [self.backbone.spatial(l) for l in range(1, self.backbone.num_blocks + 1)]
        if self.selector.num_selects is None:
            return desk_scale_num_selects(sides)
        ks = list(self.selector.num_selects)
        if len(ks) != len(sides):
            raise ValueError(f"num_selects needs {len(sides)} entries, got {ks}")
        for k, side in zip(ks, sides):
            if not 1 <= k <= side * side:
                raise ValueError(f"num_selects {k} outside [1, {side * side}] for a {side}x{side} map")
        return ks

    def feature_widths(self) -> list[int]:
        if self.fpn_enabled:
            return [self.backbone.fpn_width] * self.backbone.num_blocks
        return list(self.backbone.widths)

    def head_names(self) -> list[str]:
        if self.selector_enabled:
            names = [f"block{l}" for l in range(1, self.backbone.num_blocks + 1)]
            return names + (["combiner"] if self.combiner_enabled else [])
        return ["combiner" if self.combiner_enabled else "global"]


@dataclass
class Outputs:
    maps: list[FeatureMap]
    point_logits: list[PointLogits]
    selections: list[SelectionResult]
    scores: Tensor | None  # combiner or global head logits (B, C')


class PlugInModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        if not cfg.num_classes or cfg.num_classes < 1:
            raise ValueError(f"model needs a positive class count, got {cfg.num_classes}")
        self.cfg = cfg
        self.backbone = Backbone(cfg.backbone, rng)
        widths = cfg.feature_widths()
        if cfg.fpn_enabled:
            self.fpn = FPN(list(cfg.backbone.widths), cfg.backbone.fpn_width, rng)
        if cfg.selector_enabled:
            self.heads = [Linear(rng, c, cfg.num_classes) for c in widths]
            self.num_selects = cfg.resolved_num_selects()
        else:
            self.num_selects = [cfg.backbone.spatial(l) ** 2 for l in range(1, cfg.backbone.num_blocks + 1)]
        if cfg.combiner_enabled:
            if len(set(widths)) != 1:
                raise ValueError(f"combiner needs a common feature width; got {widths} (enable the pyramid)")
            self.combiner = Combiner(cfg.combiner, sum(self.num_selects), widths[0], cfg.num_classes, rng)
        elif not cfg.selector_enabled:
            self.classifier = Linear(rng, widths[0 if cfg.fpn_enabled else -1], cfg.num_classes)

    def features(self, images: Tensor) -> list[FeatureMap]:
        maps = self.backbone.extract(images)
        return self.fpn(maps) if self.cfg.fpn_enabled else maps

    def __call__(self, images: Tensor) -> Outputs:
        maps = self.features(images)
        pls, srs = [], []
        if self.cfg.selector_enabled:
            for fmap, head, k in zip(maps, self.heads, self.num_selects):
                pl = classify_points(fmap, head)
                pls.append(pl)
                srs.append(select(pl, fmap, k))
        elif self.cfg.combiner_enabled:
            srs = [_all_points(m) for m in maps]
        scores = None
        if self.cfg.combiner_enabled:
            scores = self.combiner(srs)
        elif not self.cfg.selector_enabled:
            # finest fused level with the pyramid, deepest block without it
            fmap = maps[0] if self.cfg.fpn_enabled else maps[-1]
            scores = self.classifier(ops.mean(ops.mean(fmap.features, axis=3), axis=2))
        return Outputs(maps, pls, srs, scores)

    def losses(self, out: Outputs, labels, weights: L.LossWeights) -> L.LossBundle:
        lb = ls = ln = lc = None
        zs = hs = ns = ()
        if out.point_logits:
            lb, zs = L.block_average_loss(out.point_logits, labels)
            ls, hs = L.selected_loss(out.point_logits, out.selections, labels)
            ln, ns = L.flatten_loss(out.point_logits, out.selections)
        if out.scores is not None:
            lc = L.combiner_loss(out.scores, labels)
        return L.total_loss(lb, ls, ln, lc, weights, zs, hs, ns)

    def head_scores(self, out: Outputs) -> np.ndarray:
        """(B, heads, C') probability vectors in :meth:`ModelConfig.head_names` order."""
        heads = [pl.probs.data.mean(axis=1) for pl in out.point_logits]
        if out.scores is not None:
            s = out.scores.data - out.scores.data.max(axis=1, keepdims=True)
            e = np.exp(s)
            heads.append(e / e.sum(axis=1, keepdims=True))
        return np.stack(heads, axis=1).astype(np.float64)


def _all_points(fmap: FeatureMap) -> SelectionResult:
    n, c, h, w = fmap.features.shape
    idx = np.broadcast_to(np.arange(h * w), (n, h * w)).copy()
    feats = ops.reshape(ops.transpose(fmap.features, (0, 2, 3, 1)), (n, h * w, c))
    return SelectionResult(fmap.block_index, (h, w), idx, np.zeros((n, 0), dtype=np.intp),
                           feats, np.ones((n, h * w)))
