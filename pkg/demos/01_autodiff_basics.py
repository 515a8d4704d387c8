"""A tour of the reverse-mode engine underneath everything else.

Build a graph of named tensors, run a forward pass, pull gradients back,
and cross-check one of them against central finite differences.
"""
import numpy as np

from uniprune.autodiff import Graph, backward, finite_diff, forward

rng = np.random.default_rng(0)

# A toy two-matrix chain with a nonlinearity: loss = mean((silu(x @ W) @ V)^2).
g = Graph()
x = g.placeholder("x", (4, 3))
w = g.parameter("w", rng.normal(size=(3, 5)))
v = g.parameter("v", rng.normal(size=(5, 2)))
hidden = g.silu(g.matmul(x, w))
out = g.matmul(hidden, v)
loss = g.mse(out, g.constant(np.zeros((4, 2))))

x_val = rng.normal(size=(4, 3))
values = forward(g, {"x": x_val})
print(f"loss = {values[loss]:.6f}")

grads = backward(g, loss, values)
print(f"dloss/dw[0] = {np.array2string(grads[w][0], precision=5)}")


def loss_at(w_val):
    g.set_param("w", w_val)
    return float(forward(g, {"x": x_val})[loss])


# The engine's backward should agree with numeric differentiation.
numeric = finite_diff(loss_at, g.get_param("w"))
err = np.max(np.abs(grads[w] - numeric)) / max(np.max(np.abs(numeric)), 1e-12)
print(f"max relative error vs finite differences: {err:.2e}")
assert err < 1e-6
print("backward matches finite differences.")
