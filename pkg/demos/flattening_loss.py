"""
What the background flattening loss does and does not constrain
===============================================================

The loss on dropped points looks only at their *mean* class distribution.
Descending on it drives that mean to uniform, which we watch here, while the
individual points are free to stay confident as long as they disagree.
"""

import math

import numpy as np

from finegrain.diffcore import Tensor, backward, ops, set_precision
from finegrain.losses import flatten_loss
from finegrain.selector import PointLogits, SelectionResult

set_precision(64)
rng = np.random.default_rng(0)
classes, points = 10, 12

# point 0 is "selected", the other eleven are background
logits = Tensor(rng.normal(scale=2.0, size=(1, points, classes)), requires_grad=True)
sel = SelectionResult(1, (3, 4), np.array([[0]]), np.arange(1, points)[None],
                      Tensor(np.zeros((1, 1, 1))), np.zeros((1, 1)))

print(f"uniform optimum: {-classes * math.log(1 - 1 / classes):.5f}")
for step in range(3001):
    pl = PointLogits(1, logits, ops.softmax(logits, axis=-1), (3, 4))
    value, ns = flatten_loss([pl], [sel])
    if step % 1000 == 0:
        dropped = pl.probs.data[0, 1:]
        print(f"step {step:4d}  L_n {float(value.data):.5f}  "
              f"mean max-prob {ns[0].data.max():.3f}  per-point max-prob {dropped.max(axis=1).max():.3f}")
    backward(value, [logits])
    logits.data -= 0.5 * (points - 1) * logits.grad
