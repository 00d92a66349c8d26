"""Per-head accuracy, top-k head ensembling, selection masks and hit rates."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..diffcore import Tensor, get_dtype
from ..model import PlugInModel
from ..selector import threshold_filter
from .data import AugmentConfig, Dataset, augment, test_view_box

log = logging.getLogger(__name__)


@dataclass
class EvalRecord:
    path: str
    label: int
    scores: np.ndarray  # (heads, C'), each row a probability vector
    head_names: list[str]


def rank_heads(scores: np.ndarray, order: str = "confidence") -> np.ndarray:
    """Head indices for one image, most trusted first.

    ``confidence`` sorts by each head's top probability (ties keep head
    order); ``fixed`` keeps the declared head order.
    """
    if order == "confidence":
        return np.argsort(-scores.max(axis=1), kind="stable")
    if order == "fixed":
        return np.arange(scores.shape[0])
    raise ValueError(f"head order must be 'confidence' or 'fixed', got {order!r}")


def ensemble(scores: np.ndarray, k: int, order: str = "confidence") -> np.ndarray:
    """Average the top-``k`` head vectors per image; ``scores`` is (B, heads, C')."""
    heads = scores.shape[1]
    if not 1 <= k <= heads:
        raise ValueError(f"ensemble size k={k} outside [1, {heads}]")
    out = np.empty((scores.shape[0], scores.shape[2]))
    for i, s in enumerate(scores):
        out[i] = s[rank_heads(s, order)[:k]].mean(axis=0)
    return out


def ensemble_predict(scores: np.ndarray, k: int, order: str = "confidence") -> np.ndarray:
    return ensemble(scores, k, order).argmax(axis=1)


def test_images(ds: Dataset, crop: int, aug: AugmentConfig) -> np.ndarray:
    return np.stack([augment(im, "test", crop, aug) for im in ds.images])


def _forward_batches(model: PlugInModel, images: np.ndarray, batch_size: int):
    for start in range(0, len(images), batch_size):
        x = Tensor(images[start:start + batch_size].astype(get_dtype()))
        yield start, model(x)


def evaluate_model(
    model: PlugInModel,
    ds: Dataset,
    aug: AugmentConfig,
    batch_size: int = 8,
    ks=None,
    threshold: float | None = None,
    head_order: str = "confidence",
    per_region: bool = False,
    images: np.ndarray | None = None,
) -> tuple[dict[str, float], list[EvalRecord]]:
    """Accuracy of every head and of each top-k ensemble.

    With ``threshold`` set, a block head scores an image by its selected
    points that pass the threshold, falling back to all points when none do.
    """
    crop = model.cfg.backbone.input_resolution
    if images is None:
        images = test_images(ds, crop, aug)
    names = model.cfg.head_names()
    heads = len(names)
    ks = list(range(1, min(5, heads) + 1)) if ks is None else list(ks)
    for k in ks:
        if not 1 <= k <= heads:
            raise ValueError(f"ensemble size k={k} outside [1, {heads}]")
    all_scores = []
    region_hits: dict[str, int] = {}
    for start, out in _forward_batches(model, images, batch_size):
        scores = model.head_scores(out)
        labels = ds.labels[start:start + scores.shape[0]]
        if threshold is not None:
            for l, (pl, sr) in enumerate(zip(out.point_logits, out.selections)):
                filt = threshold_filter(sr, pl, threshold)
                for i in range(scores.shape[0]):
                    kept = filt.kept(i)
                    if kept.size:
                        scores[i, l] = pl.probs.data[i, kept].mean(axis=0)
        if per_region:
            for pl, sr in zip(out.point_logits, out.selections):
                b = sr.block_index
                probs = pl.probs.data
                sel = np.take_along_axis(probs, sr.selected_indices[..., None], axis=1).mean(axis=1)
                key = f"sel_acc_block{b}"
                region_hits[key] = region_hits.get(key, 0) + int((sel.argmax(1) == labels).sum())
                if sr.dropped_indices.shape[1]:
                    drop = np.take_along_axis(probs, sr.dropped_indices[..., None], axis=1).mean(axis=1)
                    key = f"drop_acc_block{b}"
                    region_hits[key] = region_hits.get(key, 0) + int((drop.argmax(1) == labels).sum())
        all_scores.append(scores)
    scores = np.concatenate(all_scores)
    records = [EvalRecord(p, int(y), s, names) for p, y, s in zip(ds.paths, ds.labels, scores)]
    acc = {f"acc_{name}": float((scores[:, h].argmax(1) == ds.labels).mean()) for h, name in enumerate(names)}
    for k in ks:
        acc[f"acc_top{k}"] = float((ensemble_predict(scores, k, head_order) == ds.labels).mean())
    for key, hits in region_hits.items():
        acc[key] = hits / len(ds)
    return acc, records


def headline_accuracy(acc: dict[str, float], k: int) -> float:
    """Top-k ensemble accuracy, or the single head when there is only one."""
    return acc.get(f"acc_top{k}", acc.get("acc_top1"))


# ---------------------------------------------------------------- masks

def upsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    return np.kron(mask, np.ones((factor, factor), dtype=mask.dtype))


def write_pgm(path: Path, mask01: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((mask01 > 0).astype(np.uint8) * 255, mode="L").save(path, format="PPM")


def box_fraction(mask_up: np.ndarray, box) -> float:
    """Share of selected pixels lying inside the box (continuous-edge overlap)."""
    y0, x0, y1, x1 = box
    h, w = mask_up.shape
    ys = np.clip(np.minimum(np.arange(h) + 1, y1) - np.maximum(np.arange(h), y0), 0, 1)
    xs = np.clip(np.minimum(np.arange(w) + 1, x1) - np.maximum(np.arange(w), x0), 0, 1)
    inside = (mask_up > 0) * np.outer(ys, xs)
    total = float((mask_up > 0).sum())
    return float(inside.sum()) / total if total else 0.0


def selection_hit_report(masks_last: np.ndarray, boxes: list, crop: int) -> dict[str, float]:
    """Hit rate of last-block selections inside motif boxes versus the area-chance rate.

    ``masks_last`` is (N, h, w) binary at block resolution; boxes are in the
    ``crop``-pixel evaluation frame. A random selection of cells hits the box
    at exactly the box's area fraction in expectation.
    """
    factor = crop // masks_last.shape[1]
    hits, chance = [], []
    for m, box in zip(masks_last, boxes):
        hits.append(box_fraction(upsample_mask(m, factor), box))
        y0, x0, y1, x1 = box
        chance.append(max(y1 - y0, 0) * max(x1 - x0, 0) / (crop * crop))
    hits, chance = np.array(hits), np.array(chance)
    k = int(masks_last[0].sum()) if len(masks_last) else 0
    p = float(chance.mean()) if len(chance) else 0.0
    n_points = max(len(hits) * max(k, 1), 1)
    return {
        "hit_rate": float(hits.mean()) if len(hits) else 0.0,
        "chance_rate": p,
        "ratio": float(hits.mean() / p) if p else float("nan"),
        "binomial_se": float(np.sqrt(p * (1 - p) / n_points)),
        "num_images": int(len(hits)),
        "num_selects": k,
    }


def export_masks(model: PlugInModel, ds: Dataset, out_dir: str | Path, aug: AugmentConfig,
                 batch_size: int = 8) -> dict | None:
    """Write one PGM per image and block; return the last-block hit report if ground truth exists."""
    if not model.cfg.selector_enabled:
        raise ValueError("export_masks needs a model with the selector enabled")
    out = Path(out_dir)
    crop = model.cfg.backbone.input_resolution
    images = test_images(ds, crop, aug)
    last_masks = []
    for start, res in _forward_batches(model, images, batch_size):
        for sr in res.selections:
            masks = sr.mask
            factor = crop // sr.hw[0]
            for i, m in enumerate(masks):
                rel = Path(ds.paths[start + i])
                write_pgm(out / rel.parent / f"{rel.stem}_block{sr.block_index}.pgm", upsample_mask(m, factor))
        last_masks.append(res.selections[-1].mask)
    if ds.motif_boxes is None:
        log.warning("export_masks: %s has no motifs.index; hit report skipped", ds.root)
        return None
    source = ds.images.shape[1]
    boxes = [test_view_box(b, source, crop, aug) for b in ds.motif_boxes]
    report = selection_hit_report(np.concatenate(last_masks), boxes, crop)
    (out / "hit_report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return report
