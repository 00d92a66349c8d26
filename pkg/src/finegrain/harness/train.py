"""Training loop, run manifests and checkpoint loading."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..diffcore import OptimizerState, Tensor, backward, get_dtype, set_precision, sgd_step
from ..model import PlugInModel
from .checkpoint import load_parameters, read_checkpoint, round_to_storage, save_checkpoint
from .config import RunConfig
from .data import Dataset, augment, ingest, sample_rng
from .evaluate import evaluate_model, headline_accuracy, test_images
from .metrics import MetricsWriter

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.pimckpt"
# keys that locate files but never change what is computed
_LOCATION_KEYS = ("out_dir", "data.train_dir", "data.test_dir")


@dataclass
class TrainResult:
    model: PlugInModel
    checkpoint: Path
    manifest: dict
    final_eval: dict[str, float]
    metrics: list[dict]


def resolve_model_config(cfg: RunConfig, num_classes: int):
    mcfg = copy.deepcopy(cfg.model)
    if mcfg.num_classes is None:
        mcfg.num_classes = num_classes
    elif mcfg.num_classes != num_classes:
        raise ValueError(f"config says {mcfg.num_classes} classes but the data has {num_classes}")
    return mcfg


def build_manifest(cfg: RunConfig, model: PlugInModel, train: Dataset, total_steps: int) -> dict:
    flat = {k: v for k, v in cfg.to_flat().items() if k not in _LOCATION_KEYS}
    return {
        "format": 1,
        "seed": cfg.seed,
        "config": flat,
        "resolved": {
            "num_classes": model.cfg.num_classes,
            "class_names": train.class_names,
            "num_selects": list(model.num_selects),
            "head_names": model.cfg.head_names(),
            "total_steps": total_steps,
            "steps_per_epoch": math.ceil(len(train) / cfg.batch_size),
            "loss_weights": {
                "block": cfg.loss.block,
                "selected": cfg.loss.selected,
                "flatten": cfg.loss.flatten,
                "combiner": cfg.loss.combiner,
            },
        },
    }


def _batch(train: Dataset, idx: np.ndarray, cfg: RunConfig, epoch: int, crop: int) -> np.ndarray:
    views = [augment(train.images[i], "train", crop, cfg.augment, sample_rng(cfg.seed, epoch, int(i))) for i in idx]
    return np.stack(views).astype(get_dtype())


def _dump_nan(out_dir: Path, epoch: int, batch_id: int, idx, train: Dataset, scalars: dict) -> Path:
    path = out_dir / f"nan_dump_epoch{epoch}_batch{batch_id}.json"
    path.write_text(json.dumps({
        "epoch": epoch,
        "batch_id": batch_id,
        "indices": [int(i) for i in idx],
        "paths": [train.paths[i] for i in idx],
        "losses": scalars,
    }, indent=1))
    return path


def train(cfg: RunConfig, train_data: Dataset | None = None, test_data: Dataset | None = None) -> TrainResult:
    set_precision(cfg.precision)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ds = train_data if train_data is not None else ingest(cfg.data.train_dir)
    test_ds = test_data
    if test_ds is None and cfg.data.test_dir:
        test_ds = ingest(cfg.data.test_dir)

    mcfg = resolve_model_config(cfg, train_ds.num_classes)
    model = PlugInModel(mcfg, np.random.default_rng(cfg.seed))
    params = model.parameters()
    steps_per_epoch = math.ceil(len(train_ds) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    manifest = build_manifest(cfg, model, train_ds, total_steps)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")

    opt = OptimizerState(
        learning_rate_base=cfg.optim.lr,
        weight_decay=cfg.optim.weight_decay,
        momentum=cfg.optim.momentum,
        total_steps=total_steps,
    )
    metrics = MetricsWriter(out_dir / "metrics.jsonl")
    crop = mcfg.backbone.input_resolution
    eval_images = test_images(test_ds, crop, cfg.augment) if test_ds is not None else None
    ks = range(1, min(cfg.eval.k, len(mcfg.head_names())) + 1)

    def run_eval():
        acc, _ = evaluate_model(model, test_ds, cfg.augment, cfg.batch_size, ks,
                                cfg.eval.threshold, cfg.eval.head_order, images=eval_images)
        return acc

    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch, 7]).permutation(len(train_ds))
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            x = Tensor(_batch(train_ds, idx, cfg, epoch, crop))
            out = model(x)
            bundle = model.losses(out, train_ds.labels[idx], cfg.loss)
            scalars = bundle.scalars()
            if not all(math.isfinite(v) for v in scalars.values()):
                dump = _dump_nan(out_dir, epoch, b, idx, train_ds, scalars)
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} batch {b} ({scalars}); batch dumped to {dump}"
                )
            backward(bundle.total, params)
            lr = sgd_step(opt, params)
            metrics.write("step", opt.step_index, epoch=epoch, lr=lr, **scalars)
        if test_ds is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
            acc = run_eval()
            metrics.write("epoch", opt.step_index, epoch=epoch, **acc)
            log.info("epoch %d: %s", epoch, acc)

    round_to_storage(model)
    final = run_eval() if test_ds is not None else {}
    if final:
        metrics.write("final", opt.step_index, headline=headline_accuracy(final, cfg.eval.k), **final)
    ckpt = save_checkpoint(out_dir / CHECKPOINT_NAME, model, manifest)
    return TrainResult(model, ckpt, manifest, final, metrics.records)


def load_model(path: str | Path) -> tuple[PlugInModel, RunConfig, dict]:
    """Rebuild the model described by a checkpoint and load its parameters."""
    manifest, arrays = read_checkpoint(path)
    cfg = RunConfig.from_flat(manifest["config"])
    set_precision(cfg.precision)
    mcfg = copy.deepcopy(cfg.model)
    mcfg.num_classes = manifest["resolved"]["num_classes"]
    model = PlugInModel(mcfg, np.random.default_rng(cfg.seed))
    load_parameters(model, manifest, arrays)
    return model, cfg, manifest
