"""Tiny end-to-end configurations shared by the harness and acceptance tests."""
from itertools import permutations

import numpy as np

from finegrain.harness import load_config


def tiny_spec(**kw):
    from finegrain.harness import SyntheticSpec

    base = dict(num_classes=3, train_per_class=4, test_per_class=2, canvas=16, clutter=1, margin=2, motif_scale=1)
    base.update(kw)
    return SyntheticSpec(**base)


def tiny_config(root, out_dir, **extra):
    """64-bit, two-block 16x16 model on a synthetic dataset at ``root``."""
    overrides = {
        "data.train_dir": f"{root}/train",
        "data.test_dir": f"{root}/test",
        "out_dir": str(out_dir),
        "precision": 64,
        "epochs": 2,
        "batch_size": 4,
        "model.backbone.num_blocks": 2,
        "model.backbone.input_resolution": 16,
        "model.backbone.widths": [4, 6],
        "model.backbone.fpn_width": 4,
        "model.selector.num_selects": [8, 2],
        "model.combiner.pooling_ratios": ["1/2"],
        "augment.scale_size": 21,
        "optim.lr": 0.01,
    }
    overrides.update(extra)
    return load_config(None, [f"{k}={_json(v)}" for k, v in overrides.items()])


def _json(v):
    import json

    return v if isinstance(v, str) else json.dumps(v)


def brute_force_ensemble(scores, k):
    """Per image, search every head ordering for the one sorted by top probability.

    Among orderings whose top probabilities never increase, the
    lexicographically smallest (by head index) wins; its first ``k`` rows are
    averaged in that order.
    """
    preds, means = [], []
    for s in scores:
        heads = s.shape[0]
        best = None
        for order in permutations(range(heads)):
            conf = [s[h].max() for h in order]
            if all(conf[i] >= conf[i + 1] for i in range(heads - 1)):
                best = order if best is None else min(best, order)
        acc = s[best[0]].copy()
        for h in best[1:k]:
            acc = acc + s[h]
        mean = acc / k
        means.append(mean)
        preds.append(int(np.argmax(mean)))
    return np.array(preds), np.array(means)
