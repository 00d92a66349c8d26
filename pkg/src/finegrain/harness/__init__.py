"""Data, training, evaluation, checkpoints and the command line."""
from .checkpoint import MAGIC, read_checkpoint, save_checkpoint
from .config import RunConfig, config_keys, load_config
from .data import AugmentConfig, Dataset, augment, ingest
from .evaluate import (
    EvalRecord,
    ensemble,
    ensemble_predict,
    evaluate_model,
    export_masks,
    selection_hit_report,
)
from .metrics import read_metrics
from .synth import SyntheticSpec, synth_generate
from .train import TrainResult, load_model, train

__all__ = [
    "MAGIC",
    "AugmentConfig",
    "Dataset",
    "EvalRecord",
    "RunConfig",
    "SyntheticSpec",
    "TrainResult",
    "augment",
    "config_keys",
    "ensemble",
    "ensemble_predict",
    "evaluate_model",
    "export_masks",
    "ingest",
    "load_config",
    "load_model",
    "read_checkpoint",
    "read_metrics",
    "save_checkpoint",
    "selection_hit_report",
    "synth_generate",
    "train",
]
