"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Graph` whenever one of
their inputs requires a gradient.  Outside a ``with Graph():`` block nothing
is recorded, which is the inference fast path used by decoding.

Example
-------
>>> w = Tensor(np.ones((2, 2)), requires_grad=True, name="w")
>>> x = Tensor(np.eye(2))
>>> with Graph() as g:
...     loss = sum_all(matmul(x, w))
>>> backward(g, loss)["w"]
array([[1., 1.],
       [1., 1.]])
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "NonFiniteError",
    "Tensor",
    "Graph",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "linear",
    "transpose",
    "reshape",
    "relu",
    "softmax",
    "layer_norm",
    "embedding",
    "gather_rows",
    "log_softmax",
    "dropout",
    "sum_all",
    "softmax_cross_entropy",
    "backward",
    "grad_check",
]


class NonFiniteError(FloatingPointError):
    """Raised when a kernel produces NaN or Inf."""


_state = threading.local()


def _active_graph() -> "Graph | None":
    return getattr(_state, "graph", None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("inputs", "op", "output", "grad_fn")

    def __init__(self, inputs, op, output, grad_fn):
        self.inputs = inputs
        self.op = op
        self.output = output
        self.grad_fn = grad_fn


class Graph:
    """Tape of operation records; insertion order is a topological order."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._previous = None

    def __enter__(self) -> "Graph":
        self._previous = _active_graph()
        _state.graph = self
        return self

    def __exit__(self, *exc) -> None:
        _state.graph = self._previous

    def __len__(self) -> int:
        return len(self.nodes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite(out: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(out).all():
        raise NonFiniteError(f"non-finite values produced by {op}")
    return out


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, grad_fn) -> Tensor:
    _finite(out, op)
    needs = any(t.requires_grad for t in inputs)
    graph = _active_graph()
    result = Tensor(out, requires_grad=needs and graph is not None)
    if result.requires_grad:
        graph.nodes.append(_Node(tuple(inputs), op, result, grad_fn))
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", (a, b), a.data + b.data, grad_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("sub", (a, b), a.data - b.data, grad_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("mul", (a, b), a.data * b.data, grad_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    return _emit("scale", (a,), a.data * factor, lambda g: (g * factor,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit("sum", (a,), np.asarray(a.data.sum()), lambda g: (np.broadcast_to(g, shape).copy(),))


# --------------------------------------------------------------------------
# shape
# --------------------------------------------------------------------------


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.data.ndim))[::-1]
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", (a,), a.data.transpose(axes), lambda g: (g.transpose(inverse),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape
    return _emit("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(original),))


# --------------------------------------------------------------------------
# linear algebra and normalisation
# --------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product ``a @ b`` with numpy broadcasting of batch dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if a.data.ndim > 2 and b.data.ndim == 2:
                # fold batch dims for a single large GEMM
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _emit("matmul", (a, b), a.data @ b.data, grad_fn)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``, folded into one 2-D product."""
    k = x.shape[-1]
    if w.data.ndim != 2 or w.shape[0] != k:
        raise ValueError(f"linear dimension mismatch: {x.shape} @ {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, k)
    out = x2 @ w.data
    if b is not None:
        out = out + b.data
    inputs = (x, w) if b is None else (x, w, b)

    def grad_fn(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)

    return _emit("linear", inputs, out.reshape(*lead, w.shape[1]), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis with the population variance."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm expects gamma/beta of shape ({d},), got {gamma.shape}, {beta.shape}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def grad_fn(g):
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data
            gx = inv_std * (
                gxhat
                - gxhat.mean(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
            )
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return _emit("layer_norm", (x, gamma, beta), out, grad_fn)


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` (broadcastable, True = keep) zeroes entries exactly."""
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (x,), p, grad_fn)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    n_rows = table.shape[0]

    def grad_fn(g):
        flat = g.reshape(-1, g.shape[-1])
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), flat)
        return (gt,)

    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise IndexError(f"embedding id out of range [0, {n_rows})")
    return _emit("embedding", (table,), table.data[ids], grad_fn)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows of ``x`` flattened to (N, d), selected by flat ``index``."""
    d = x.shape[-1]
    index = np.asarray(index, dtype=np.int64)
    flat = x.data.reshape(-1, d)
    shape = x.shape

    def grad_fn(g):
        full = np.zeros_like(flat)
        np.add.at(full, index, g)
        return (full.reshape(shape),)

    return _emit("gather_rows", (x,), flat[index], grad_fn)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return _emit("log_softmax", (x,), out, lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout with a mask drawn from ``rng``; identity when ``rng`` is None or p == 0."""
    if rng is None or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _emit("dropout", (x,), x.data * keep, lambda g: (g * keep,))


def softmax_cross_entropy(logits: Tensor, targets: Sequence[int], ignore_index: int = -100) -> Tensor:
    """Mean token cross-entropy over rows whose target is not ``ignore_index``."""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    z = logits.data.reshape(-1, logits.shape[-1])
    if z.shape[0] != targets.shape[0]:
        raise ValueError(f"{z.shape[0]} logit rows but {targets.shape[0]} targets")
    keep = targets != ignore_index
    count = int(keep.sum())
    if count == 0:
        raise ValueError("empty loss")
    vocab = z.shape[1]
    if (targets[keep] < 0).any() or (targets[keep] >= vocab).any():
        raise IndexError(f"target outside [0, {vocab})")
    rows = np.nonzero(keep)[0]
    picked = z[rows]
    shifted = picked - picked.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    gold = shifted[np.arange(count), targets[rows]]
    loss = float((log_norm - gold).sum() / count)
    shape = logits.shape

    def grad_fn(g):
        probs = np.exp(shifted - log_norm[:, None])
        probs[np.arange(count), targets[rows]] -= 1.0
        full = np.zeros_like(z)
        full[rows] = probs * (g / count)
        return (full.reshape(shape),)

    return _emit("cross_entropy", (logits,), np.asarray(loss), grad_fn)


# --------------------------------------------------------------------------
# differentiation
# --------------------------------------------------------------------------


def backward(graph: Graph, root: Tensor) -> dict[str, np.ndarray]:
    """Back-propagate from scalar ``root``; return gradients of named leaves.

    Gradients are also stored on every leaf's ``.grad``.  Leaves that do not
    require a gradient never receive one.
    """
    if root.data.size != 1 or root.data.ndim != 0:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {id(root): np.ones((), dtype=np.float64)}
    produced = set()
    leaves: dict[int, Tensor] = {}
    for node in graph.nodes:
        produced.add(id(node.output))
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        input_grads = node.grad_fn(g)
        for t, gi in zip(node.inputs, input_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = t
    named: dict[str, np.ndarray] = {}
    for key, t in leaves.items():
        g = _finite(np.asarray(grads[key]), "backward")
        t.grad = g
        if t.name is not None:
            named[t.name] = named[t.name] + g if t.name in named else g
    return named


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    per_tensor: bool = False,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the scalar loss from the current payloads of ``params``.
    Only parameters with ``requires_grad`` are probed; with ``max_coords``
    each tensor is probed at that many coordinates drawn from ``rng``.

    The error is ``|a - n| / (|a| + |n|)`` per coordinate, or with
    ``per_tensor`` the same ratio of L2 norms over each tensor's probed
    coordinates.  The latter keeps near-zero entries, whose finite
    differences are dominated by roundoff, from swamping the measure.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    with Graph() as g:
        root = f()
    backward(g, root)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        a_flat = a.reshape(-1)
        coords = range(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        probed, numeric = [], []
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError("non-finite objective at probe point")
            probed.append(a_flat[i])
            numeric.append((up - down) / (2.0 * eps))
        an, nu = np.array(probed), np.array(numeric)
        if per_tensor:
            err = np.linalg.norm(an - nu) / max(1e-8, np.linalg.norm(an) + np.linalg.norm(nu))
        else:
            err = (np.abs(an - nu) / np.maximum(1e-8, np.abs(an) + np.abs(nu))).max(initial=0.0)
        worst = max(worst, float(err))
    return worst
