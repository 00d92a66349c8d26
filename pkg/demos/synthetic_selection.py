"""
Training on planted motifs and looking at what gets selected
============================================================

Generate a small synthetic dataset, train the full model for a few epochs,
then print selection masks of a shallow and the deepest block next to the
motif box. Shallow blocks localize the motif; the deepest block's cells each
see the whole image, so its picks are much looser.
Takes about three minutes on one core.
"""

import tempfile
from pathlib import Path

import numpy as np

from finegrain.diffcore import Tensor
from finegrain.harness import SyntheticSpec, augment, export_masks, ingest, load_config, synth_generate, train
from finegrain.harness.data import test_view_box

work = Path(tempfile.mkdtemp(prefix="finegrain_demo_"))
config = Path(__file__).resolve().parent.parent / "configs" / "synthetic.json"

# the default dataset with a smaller test split
synth_generate(SyntheticSpec(test_per_class=10), work / "data", seed=17)

cfg = load_config(config, [
    f"data.train_dir={work}/data/train",
    f"data.test_dir={work}/data/test",
    f"out_dir={work}/run",
    "epochs=15",
])
result = train(cfg)
print({k: round(v, 3) for k, v in result.final_eval.items()})

# masks go to disk as PGM files; the report compares hits with chance
test = ingest(work / "data" / "test")
report = export_masks(result.model, test, work / "masks", cfg.augment)
print({k: round(v, 3) for k, v in report.items()})

# one image: selected cells (#), unselected cells overlapping the motif (+)
out = result.model(Tensor(np.stack([augment(test.images[0], "test", 64, cfg.augment)]).astype(np.float32)))
y0, x0, y1, x1 = test_view_box(test.motif_boxes[0], 64, 64, cfg.augment)
for block in (2, 4):
    mask = out.selections[block - 1].mask[0]
    side = 64 // mask.shape[0]
    print(f"block {block}:")
    for r in range(mask.shape[0]):
        row = ""
        for c in range(mask.shape[1]):
            inside = y0 < (r + 1) * side and y1 > r * side and x0 < (c + 1) * side and x1 > c * side
            row += "#" if mask[r, c] else ("+" if inside else ".")
        print(row)
print("outputs in", work)
