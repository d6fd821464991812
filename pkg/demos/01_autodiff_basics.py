"""
Reverse-mode autodiff on the bundled tensor type
================================================

Build a tiny computation, record it on a tape, and pull gradients back
through it. Everything is plain numpy under the hood.
"""

import numpy as np

from earnet import ops
from earnet import tensor as T

# a parameter is a tensor that wants gradients; weight rows are outputs
rng = np.random.default_rng(0)
w = T.Parameter(rng.normal(size=(2, 3)))
x = T.Tensor(rng.normal(size=(4, 3)).astype(np.float32))


def build_loss():
    h = ops.relu(ops.linear(x, w))
    return T.mean(T.mul(h, h), dims=(0, 1))


# operations recorded while a tape is active can be differentiated
with T.Tape() as tape:
    loss = build_loss()
print("loss:", loss.item())

# backward() returns a dict keyed by tensor, parameters and intermediates alike
grads = tape.backward(loss, populate_grad=False)
print("dloss/dw:\n", grads[w])

# cross-check one entry with central finite differences
eps = 1e-4
orig = w.data[1, 0]
w.data[1, 0] = orig + eps
f_plus = build_loss().item()
w.data[1, 0] = orig - eps
f_minus = build_loss().item()
w.data[1, 0] = orig
numeric = (f_plus - f_minus) / (2 * eps)
print(f"analytic {grads[w][1, 0]:+.6f} vs numeric {numeric:+.6f}")

# the library ships the same oracle as a helper, used heavily by the tests
oracle = T.finite_diff_oracle(lambda: build_loss().item(), [w], eps=1e-5)
print("max relative error over w:", T.max_relative_error(grads[w], oracle[w]))
