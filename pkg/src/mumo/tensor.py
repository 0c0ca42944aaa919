"""Dense tensors with reverse-mode automatic differentiation on numpy.

The op set is the closure of what the model needs: elementwise arithmetic,
matmul (with leading batch dims), concat/slice/gather/scatter, softmax,
layer norm, the usual activations, reductions, and the two losses. Default
precision is 32-bit; verification code switches to 64-bit via
:func:`set_default_dtype` or the :func:`precision` context manager.

A forward pass records one node per op (creation order = topological
order). :func:`backward` walks the record once in reverse; a second
backward over the same nodes raises ``StaleTape`` unless the first pass
was run with ``retain=True``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidAxis, NonScalarLoss, ShapeMismatch, StaleTape

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True

LAYER_NORM_EPS = 1e-5


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be float32 or float64")
    _DEFAULT_DTYPE = dtype


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (f64 for oracle-grade checks)."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference / verification loops)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense array plus an optional backprop record."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # Operator sugar; constants are wrapped as non-grad tensors.
    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return mul(_wrap(other, self), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable | None) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._consumed = False
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), bw)


# ---------------------------------------------------------------------------
# shape and indexing


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.data.shape))

    return _make(data, (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.transpose(a.data, axes)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, np.transpose(g, inv))

    return _make(data, (a,), bw)


def broadcast_to(a: Tensor, shape) -> Tensor:
    data = np.broadcast_to(a.data, shape).copy()

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))

    return _make(data, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    base = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != base:
            raise ShapeMismatch("concat rank mismatch")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        parts = np.split(g, offsets, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                _accumulate(t, p)

    return _make(data, tuple(tensors), bw)


def slice_(a: Tensor, key) -> Tensor:
    """Basic indexing (ints and slices); gradient scatters back into zeros."""
    data = a.data[key]
    if not isinstance(data, np.ndarray):
        data = np.asarray(data, dtype=a.data.dtype)

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[key] = g
            _accumulate(a, full)

    return _make(data, (a,), bw)


def gather(a: Tensor, idx: np.ndarray, axis: int = 0) -> Tensor:
    """Integer row gather along one axis (duplicate indices allowed)."""
    if axis != 0:
        raise InvalidAxis("gather supports axis 0")
    idx = np.asarray(idx, dtype=np.int64)
    data = a.data[idx]

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accumulate(a, full)

    return _make(data, (a,), bw)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Look up rows of ``table`` by an integer id array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def bw(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
            _accumulate(table, full)

    return _make(data, (table,), bw)


def index_add(base: Tensor, idx: np.ndarray, src: Tensor) -> Tensor:
    """out[idx[i]] += src[i] over axis 0 (scatter-sum for pooling/messages)."""
    idx = np.asarray(idx, dtype=np.int64)
    if src.data.shape[0] != idx.shape[0]:
        raise ShapeMismatch("index_add length mismatch")
    data = base.data.copy()
    np.add.at(data, idx, src.data)

    def bw(g):
        if base.requires_grad:
            _accumulate(base, g)
        if src.requires_grad:
            _accumulate(src, g[idx])

    return _make(data, (base, src), bw)


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    data = np.where(mask, np.asarray(value, dtype=a.data.dtype), a.data)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, np.where(mask, 0.0, g))

    return _make(data, (a,), bw)


# ---------------------------------------------------------------------------
# reductions


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if a.requires_grad:
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(np.asarray(data, dtype=a.data.dtype), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), Tensor(np.asarray(1.0 / n, dtype=a.data.dtype)))


def amax(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max over one axis; ties route the gradient to the first maximum."""
    data = a.data.max(axis=axis, keepdims=True)
    first = np.cumsum(a.data == data, axis=axis) == 1
    hot = (a.data == data) & first

    def bw(g):
        if a.requires_grad:
            g = np.asarray(g)
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.where(hot, g, 0.0))

    out = data if keepdims else np.squeeze(data, axis=axis)
    return _make(out, (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g * (1.0 - data * data))

    return _make(data, (a,), bw)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, np.where(a.data > 0.0, g, 0.0))

    return _make(data, (a,), bw)


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))
    data = a.data * sig

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g * (sig + a.data * sig * (1.0 - sig)))

    return _make(data, (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if a.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            _accumulate(a, data * (g - dot))

    return _make(data, (a,), bw)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis with learnable scale/shift."""
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data
    n = a.data.shape[-1]

    def bw(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).reshape(-1, n).sum(axis=0))
        if beta.requires_grad:
            _accumulate(beta, g.reshape(-1, n).sum(axis=0))
        if a.requires_grad:
            gx = g * gamma.data
            term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            _accumulate(a, term * inv)

    return _make(data, (a, gamma, beta), bw)


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets over logit rows."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.data.shape[0],):
        raise ShapeMismatch("cross_entropy expects [N, C] logits and [N] targets")
    n = logits.data.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    data = np.asarray(-logp[np.arange(n), targets].mean(), dtype=logits.data.dtype)

    def bw(g):
        if logits.requires_grad:
            p = np.exp(logp)
            p[np.arange(n), targets] -= 1.0
            _accumulate(logits, g * p / n)

    return _make(data, (logits,), bw)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy from raw logits (numerically stable)."""
    t = np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.data.shape:
        raise ShapeMismatch("bce_with_logits shape mismatch")
    x = logits.data
    data = np.asarray((np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))).mean(), dtype=x.dtype)
    n = x.size

    def bw(g):
        if logits.requires_grad:
            sig = 1.0 / (1.0 + np.exp(-x))
            _accumulate(logits, g * (sig - t) / n)

    return _make(data, (logits,), bw)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    if pred.data.shape != target.data.shape:
        raise ShapeMismatch("mse shape mismatch")
    diff = sub(pred, target)
    return mean(mul(diff, diff))


# ---------------------------------------------------------------------------
# backward and verification


def backward(loss: Tensor, retain: bool = False) -> None:
    """Reverse-accumulate gradients from a scalar loss into all leaves."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.data.shape}")
    order: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None:
            continue
        if node._consumed:
            raise StaleTape("backward already ran through this tape")
        node._backward(node.grad)
        if not retain:
            node._consumed = True
            node.grad = None


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-6,
               max_coords_per_param: int | None = None, seed: int = 0) -> float:
    """Compare tape gradients against central differences.

    ``f`` evaluates a scalar loss from ``params`` (already 64-bit for any
    meaningful tolerance). When a parameter has more coordinates than
    ``max_coords_per_param``, a seeded subset is probed; small blocks should
    be checked exhaustively with the default ``None``.

    Returns the max relative error |a - n| / max(|a|, |n|, 1e-8).
    """
    for p in params.values():
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n_coords = flat.size
        if max_coords_per_param is not None and n_coords > max_coords_per_param:
            coords = rng.choice(n_coords, size=max_coords_per_param, replace=False)
        else:
            coords = np.arange(n_coords)
        a_flat = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            with no_grad():
                fp = f().item()
            flat[c] = orig - h
            with no_grad():
                fm = f().item()
            flat[c] = orig
            num = (fp - fm) / (2.0 * h)
            a = a_flat[c]
            rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst
