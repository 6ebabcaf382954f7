"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Graph` (entered as a
context manager) whenever at least one operand is tracked, i.e. it either
requires a gradient or was produced earlier on the same graph. Outside a
graph every op is a plain numpy computation and results are constants.

Shapes are checked eagerly. There is no implicit broadcasting; the only
exception is :func:`add_bias`, which adds a tensor over the leading axes of
another whose trailing shape it matches.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericInputError

__all__ = [
    "Tensor", "Graph", "Node", "backward", "grad_check", "grad_check_detailed",
    "add", "sub", "mul", "neg", "scale", "add_bias", "matmul", "transpose",
    "reshape", "getitem", "concat", "repeat_leading", "sum", "mean", "softmax",
    "layer_norm", "gelu", "softplus", "dropout", "constant",
]

_local = threading.local()


def _current_graph() -> Optional["Graph"]:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """An n-dimensional float64 array that can take part in a graph.

    ``data`` is a C-contiguous ``float64`` ndarray; ``grad`` is filled in by
    :func:`backward` for tensors created with ``requires_grad=True``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_graph", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(np.array(data, dtype=np.float64))
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: Optional[int] = None
        self._graph: Optional[Graph] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def constant(data) -> Tensor:
    return Tensor(data)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]
    node_id: int


@dataclass
class Graph:
    """Ordered record of the operations of one forward pass.

    Nodes are appended in execution order, so the list is topologically
    sorted by construction. Build a new graph for every forward pass.
    """

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Graph":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def tracks(self, t: Tensor) -> bool:
        return t.requires_grad or (t._graph is self and t.node_id is not None)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, bwd) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = False
    out.name = None
    out.node_id = None
    out._graph = None
    g = _current_graph()
    if g is not None and any(g.tracks(t) for t in inputs):
        out.node_id = len(g.nodes)
        out._graph = g
        g.nodes.append(Node(op, tuple(inputs), out, bwd, out.node_id))
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return _record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return _record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _record("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def neg(a: Tensor) -> Tensor:
    return _record("neg", (a,), -a.data, lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` where ``b.shape`` equals the trailing dims of ``x``."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.ndim > x.ndim or x.shape[x.ndim - b.ndim:] != b.shape:
        raise DimensionError(f"add_bias: bias {b.shape} does not match trailing dims of {x.shape}")
    lead = tuple(range(x.ndim - b.ndim))

    def bwd(g):
        return g, g.sum(axis=lead) if lead else g

    return _record("add_bias", (x, b), x.data + b.data, bwd)


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x), evaluated as max(x, 0) + log1p(e^-|x|)."""
    xd = x.data
    out = np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))

    def bwd(g):
        # sigmoid without overflow
        e = np.exp(-np.abs(xd))
        sig = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (g * sig,)

    return _record("softplus", (x,), out, bwd)


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    xd = x.data
    inner = _GELU_C * (xd + _GELU_A * xd ** 3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * xd ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _record("gelu", (x,), out, bwd)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when ``p == 0``."""
    if p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _record("dropout", (x,), x.data * keep, lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D tensors, or batched with identical leading dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or a.ndim != b.ndim:
        raise DimensionError(f"matmul: incompatible ranks {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shape mismatch {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _record("matmul", (a, b), ad @ bd, bwd)


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: bad axes {axes} for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _record("transpose", (a,), out, lambda g: (g.transpose(inv),))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size or any(s < 0 for s in shape):
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    src = a.shape
    return _record("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(src),))


def getitem(a: Tensor, idx) -> Tensor:
    src = a.shape

    def bwd(g):
        full = np.zeros(src)
        np.add.at(full, idx, g)
        return (full,)

    return _record("getitem", (a,), np.array(a.data[idx], dtype=np.float64), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat: no tensors")
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis
        ):
            raise DimensionError(f"concat: shape mismatch {ref.shape} vs {t.shape} on axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _record("concat", tuple(tensors), out, lambda g: tuple(np.split(g, splits, axis=axis)))


def repeat_leading(a: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of ``a`` along a new leading axis."""
    out = np.broadcast_to(a.data, (n,) + a.shape).copy()
    return _record("repeat_leading", (a,), out, lambda g: (g.sum(axis=0),))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    src = a.shape
    return _record("sum", (a,), np.array(a.data.sum()), lambda g: (np.full(src, float(g)),))


def mean(a: Tensor) -> Tensor:
    src, n = a.shape, a.size
    return _record("mean", (a,), np.array(a.data.sum() / n), lambda g: (np.full(src, float(g) / n),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for shape {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericInputError("softmax: non-finite input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record("softmax", (x,), y, bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gamma * xhat + beta``."""
    d = x.shape[-1] if x.ndim else 0
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: last axis {d} vs gamma {gamma.shape} / beta {beta.shape}"
        )
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    lead = tuple(range(x.ndim - 1))

    def bwd(g):
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record("layer_norm", (x, gamma, beta), xhat * gd + beta.data, bwd)


# ---------------------------------------------------------------------------
# backward pass and numeric checking
# ---------------------------------------------------------------------------

def backward(graph: Graph, loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> dict:
    """Propagate d(loss) back through ``graph``.

    Sets ``.grad`` on every tensor in ``params`` (default: every
    ``requires_grad`` leaf reachable in the graph), overwriting previous
    values. Parameters the loss does not depend on get an all-zero gradient.
    Returns a ``{tensor: gradient}`` mapping.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad:
        leaves[id(loss)] = loss
    if loss._graph is graph and loss.node_id is not None:
        for node in reversed(graph.nodes[: loss.node_id + 1]):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, ig in zip(node.inputs, node.backward(g)):
                if ig is None or not graph.tracks(inp):
                    continue
                if inp.requires_grad:
                    leaves[id(inp)] = inp
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
    targets = list(leaves.values()) if params is None else list(params)
    out = {}
    for p in targets:
        g = grads.get(id(p))
        p.grad = np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape)
        out[p] = p.grad
    return out


def _central_differences(f, params, eps):
    for p in params:
        flat = p.data.reshape(-1)
        num = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            num[i] = (fp - fm) / (2.0 * eps)
        yield p, num.reshape(p.shape)


def grad_check_detailed(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-4) -> list:
    """Per-tensor max relative error between analytic and numeric gradients.

    ``f`` takes no arguments and returns a scalar tensor computed from
    ``params``. Relative error is ``|a - n| / max(1, |a|, |n|)``.
    Returns ``[(tensor, max_rel_err, analytic_grad), ...]``.
    """
    if eps <= 0:
        raise ContractError("grad_check: eps must be positive")
    params = list(params)
    with Graph() as g:
        loss = f()
    if loss.size != 1:
        raise ContractError(f"grad_check: function must be scalar, got shape {loss.shape}")
    analytic = backward(g, loss, params)
    report = []
    for p, num in _central_differences(f, params, eps):
        a = analytic[p]
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(num)))
        err = float(np.max(np.abs(a - num) / denom)) if a.size else 0.0
        report.append((p, err, a))
    return report


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-4) -> float:
    """Max relative error over all coordinates of ``params``."""
    report = grad_check_detailed(f, params, eps)
    return max((err for _, err, _ in report), default=0.0)
