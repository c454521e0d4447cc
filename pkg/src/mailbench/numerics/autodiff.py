"""Reverse-mode differentiation over dense float64 numpy arrays.

A ``Tape`` records primitive operations as they execute; walking the record
backwards accumulates exact gradients of a scalar output into every ``Node``
that contributed to it.  All ops accept ``tape=None``, in which case they
compute values only -- the same code path then serves rollout inference and
finite-difference re-evaluation.

Scope is deliberately small: batched dense algebra, the nonlinearities the
policy/value network needs, and inverted dropout.  No broadcasting beyond
bias addition, no convolution, no recurrence.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class Node:
    """Value plus gradient slot. ``grad`` is lazily allocated for intermediates."""

    __slots__ = ("data", "grad")

    def __init__(self, data, grad: Array | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Node(shape={self.data.shape})"


# A pull is (input node, vector-Jacobian product taking the output cotangent).
Pull = tuple[Node, Callable[[Array], Array]]


class Tape:
    """Ordered record of primitive ops, replayable backwards for gradients."""

    def __init__(self):
        self._records: list[tuple[Node, tuple[Pull, ...]]] = []

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Node, *pulls: Pull) -> None:
        self._records.append((out, pulls))

    def backward(self, root: Node) -> None:
        """Accumulate d root / d node into every recorded node's grad."""
        if root.data.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
        if root.grad is None:
            root.grad = np.ones_like(root.data)
        for out, pulls in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            for node, vjp in pulls:
                contrib = vjp(g)
                if node.grad is None:
                    node.grad = np.asarray(contrib, dtype=np.float64)
                else:
                    node.grad = node.grad + contrib


def _data(x) -> Array:
    return x.data if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a cotangent back down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def constant(x) -> Node:
    return Node(np.asarray(x, dtype=np.float64))


def matmul(tape: Tape | None, a: Node, b: Node) -> Node:
    ad, bd = _data(a), _data(b)
    out = Node(ad @ bd)
    if tape is not None:
        pulls = []
        if isinstance(a, Node):
            pulls.append((a, lambda g: g @ bd.T))
        if isinstance(b, Node):
            pulls.append((b, lambda g: ad.T @ g))
        tape.record(out, *pulls)
    return out


def add(tape: Tape | None, a, b) -> Node:
    ad, bd = _data(a), _data(b)
    out = Node(ad + bd)
    if tape is not None:
        pulls = []
        if isinstance(a, Node):
            pulls.append((a, lambda g: _unbroadcast(g, ad.shape)))
        if isinstance(b, Node):
            pulls.append((b, lambda g: _unbroadcast(g, bd.shape)))
        tape.record(out, *pulls)
    return out


def sub(tape: Tape | None, a, b) -> Node:
    ad, bd = _data(a), _data(b)
    out = Node(ad - bd)
    if tape is not None:
        pulls = []
        if isinstance(a, Node):
            pulls.append((a, lambda g: _unbroadcast(g, ad.shape)))
        if isinstance(b, Node):
            pulls.append((b, lambda g: _unbroadcast(-g, bd.shape)))
        tape.record(out, *pulls)
    return out


def mul(tape: Tape | None, a, b) -> Node:
    ad, bd = _data(a), _data(b)
    out = Node(ad * bd)
    if tape is not None:
        pulls = []
        if isinstance(a, Node):
            pulls.append((a, lambda g: _unbroadcast(g * bd, ad.shape)))
        if isinstance(b, Node):
            pulls.append((b, lambda g: _unbroadcast(g * ad, bd.shape)))
        tape.record(out, *pulls)
    return out


def neg(tape: Tape | None, a: Node) -> Node:
    out = Node(-_data(a))
    if tape is not None and isinstance(a, Node):
        tape.record(out, (a, lambda g: -g))
    return out


def reduce_sum(tape: Tape | None, a: Node, axis: int | None = None) -> Node:
    ad = _data(a)
    out = Node(ad.sum(axis=axis))
    if tape is not None and isinstance(a, Node):
        if axis is None:
            tape.record(out, (a, lambda g: np.broadcast_to(g, ad.shape).copy()))
        else:
            tape.record(out, (a, lambda g: np.broadcast_to(np.expand_dims(g, axis), ad.shape).copy()))
    return out


def reduce_mean(tape: Tape | None, a: Node, axis: int | None = None) -> Node:
    ad = _data(a)
    n = ad.size if axis is None else ad.shape[axis]
    return mul(tape, reduce_sum(tape, a, axis=axis), 1.0 / n)


def tanh(tape: Tape | None, a: Node) -> Node:
    t = np.tanh(_data(a))
    out = Node(t)
    if tape is not None and isinstance(a, Node):
        tape.record(out, (a, lambda g: g * (1.0 - t * t)))
    return out


def sigmoid(tape: Tape | None, a: Node) -> Node:
    ad = _data(a)
    # Stable two-sided evaluation.
    s = np.where(ad >= 0, 1.0 / (1.0 + np.exp(-np.abs(ad))),
                 np.exp(-np.abs(ad)) / (1.0 + np.exp(-np.abs(ad))))
    out = Node(s)
    if tape is not None and isinstance(a, Node):
        tape.record(out, (a, lambda g: g * s * (1.0 - s)))
    return out


def log(tape: Tape | None, a: Node) -> Node:
    ad = _data(a)
    out = Node(np.log(ad))
    if tape is not None and isinstance(a, Node):
        tape.record(out, (a, lambda g: g / ad))
    return out


def exp(tape: Tape | None, a: Node) -> Node:
    e = np.exp(_data(a))
    out = Node(e)
    if tape is not None and isinstance(a, Node):
        tape.record(out, (a, lambda g: g * e))
    return out


def clip(tape: Tape | None, a: Node, lo: float, hi: float) -> Node:
    """Clamp values; gradient is zero outside the open interval."""
    ad = _data(a)
    out = Node(np.clip(ad, lo, hi))
    if tape is not None and isinstance(a, Node):
        inside = (ad > lo) & (ad < hi)
        tape.record(out, (a, lambda g: g * inside))
    return out


def concat(tape: Tape | None, parts: Sequence[Node], axis: int = 1) -> Node:
    datas = [_data(p) for p in parts]
    out = Node(np.concatenate(datas, axis=axis))
    if tape is not None:
        offsets = np.cumsum([0] + [d.shape[axis] for d in datas])
        pulls = []
        for i, p in enumerate(parts):
            if isinstance(p, Node):
                sl = [slice(None)] * datas[i].ndim
                sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
                pulls.append((p, lambda g, sl=tuple(sl): g[sl]))
        tape.record(out, *pulls)
    return out


def reshape(tape: Tape | None, a: Node, shape: tuple[int, ...]) -> Node:
    ad = _data(a)
    out = Node(ad.reshape(shape))
    if tape is not None and isinstance(a, Node):
        tape.record(out, (a, lambda g: g.reshape(ad.shape)))
    return out


def softmax_rows(tape: Tape | None, a: Node) -> Node:
    ad = _data(a)
    z = ad - ad.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Node(p)
    if tape is not None and isinstance(a, Node):
        tape.record(out, (a, lambda g: (g - (g * p).sum(axis=-1, keepdims=True)) * p))
    return out


def log_softmax_rows(tape: Tape | None, a: Node) -> Node:
    ad = _data(a)
    z = ad - ad.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    ls = z - lse
    out = Node(ls)
    if tape is not None and isinstance(a, Node):
        p = np.exp(ls)
        tape.record(out, (a, lambda g: g - p * g.sum(axis=-1, keepdims=True)))
    return out


def dropout(tape: Tape | None, a: Node, rate: float, rng: np.random.Generator) -> Node:
    """Inverted dropout: surviving units scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    ad = _data(a)
    if rate == 0.0:
        return a if isinstance(a, Node) else Node(ad)
    keep = (rng.random(ad.shape) >= rate) / (1.0 - rate)
    out = Node(ad * keep)
    if tape is not None and isinstance(a, Node):
        tape.record(out, (a, lambda g: g * keep))
    return out


def stop_gradient(a: Node) -> Node:
    """Detach: value flows, gradient does not."""
    return Node(_data(a).copy())
