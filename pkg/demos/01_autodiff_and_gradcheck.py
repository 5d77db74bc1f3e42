"""
Reverse-mode gradients and the finite-difference check
======================================================

Every tensor op records its parents and a backward closure.  Calling
``backward()`` on a scalar walks the graph once in reverse topological order.
"""

import numpy as np

from a3sn import tensor as T
from a3sn.tensor import Tensor, grad_check

rng = np.random.default_rng(0)

# a tiny softmax classifier: loss = -log softmax(x W + b)[gold]
x = Tensor(rng.normal(size=(1, 4)))
W = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
b = Tensor(np.zeros(3), requires_grad=True)
gold = 2

logits = T.reshape(T.add_bias(T.matmul(x, W), b), (3,))
probs = T.softmax_rows(logits)
loss = T.scale(T.log(T.pick(probs, gold)), -1.0)
loss.backward()

print("loss          ", loss.item())
print("dL/db         ", b.grad)
print("probs - onehot", probs.data - np.eye(3)[gold])

# The same gradient against central differences.  The report holds the worst
# relative error per input; anything below 1e-4 passes.
W.grad = b.grad = None


def nll(ps):
    w, bias = ps
    z = T.reshape(T.add_bias(T.matmul(x, w), bias), (3,))
    return T.scale(T.log(T.pick(T.softmax_rows(z), gold)), -1.0)


report = grad_check(nll, [W, b])
print(f"grad_check: max rel error {report.max_rel_error:.2e} over {report.n_coords} coordinates, passed={report.passed}")

# A second backward over a consumed graph is refused.
try:
    loss.backward()
except Exception as exc:
    print("second backward:", type(exc).__name__)

# The whole-model sweep used by `a3sn gradcheck`
from a3sn.gradcheck import gradcheck_suite

for r in gradcheck_suite(seed=0):
    print(f"  {r.name:<32} {r.max_rel_error:.1e}")
