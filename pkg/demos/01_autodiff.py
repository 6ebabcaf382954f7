"""Reverse-mode differentiation on a tape, checked against finite differences."""
import numpy as np

from jointvit import autodiff as ad

rng = np.random.default_rng(0)

## A tiny two-layer function of a matrix
W = ad.Tensor(rng.normal(size=(4, 3)), requires_grad=True, name="W")
b = ad.Tensor(np.zeros(3), requires_grad=True, name="b")
x = ad.constant(rng.normal(size=(5, 4)))

def f():
    h = ad.gelu(ad.add_bias(ad.matmul(x, W), b))
    return ad.mean(ad.softmax(h, axis=-1) * h)

## Ops record themselves only inside a Graph
with ad.Graph() as g:
    loss = f()
grads = ad.backward(g, loss, [W, b])
print("loss", loss.item())
print("dL/db", grads[b])

## Central differences agree to ~1e-10
print("max relative error", ad.grad_check(f, [W, b]))

## Outside a graph nothing is tracked, so forward passes are cheap
y = f()
print("tracked outside graph:", y.node_id is not None)
