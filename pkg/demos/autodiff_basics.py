"""
Reverse-mode gradients on a numpy tape
======================================

Build a tiny softmax classifier by hand, run it backwards, and compare the
tape's gradients with central finite differences.
"""

import numpy as np

from finegrain.diffcore import Tensor, backward, check_gradients, ops, set_precision

# gradient checks want 64-bit arithmetic
set_precision(64)
rng = np.random.default_rng(0)

x = Tensor(rng.normal(size=(5, 4)))
w = Tensor(rng.normal(size=(4, 3)), requires_grad=True, name="w")
b = Tensor(np.zeros(3), requires_grad=True, name="b")
labels = [0, 2, 1, 1, 0]


def loss():
    return ops.cross_entropy(ops.add_bias(ops.matmul(x, w), b, axis=1), labels)


value = loss()
backward(value, [w, b])
print("loss", float(value.data))
print("d loss / d b", b.grad.round(4))

# every row compares one analytic entry with its finite difference
rows = check_gradients(loss, [w, b], probes=10, rng=rng)
for name, idx, analytic, numeric, err in rows:
    print(f"{name}{list(idx)}  tape {analytic:+.6f}  numeric {numeric:+.6f}  rel err {err:.1e}")

# shapes are never broadcast silently
try:
    ops.add(w, b)
except ValueError as exc:
    print("refused:", exc)
