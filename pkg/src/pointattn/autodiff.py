"""Dense float64 tensors with tape-based reverse-mode gradients.

Just enough machinery for the segmentation network: matrix products, row
gathers, softmax, a few pointwise nonlinearities, cross-entropy, and
Adam / momentum-SGD updates over a named :class:`ParameterStore`.

Each op records its parents and a closure that pushes the output gradient
back to them; :func:`backward` walks the recorded graph once in reverse
topological order. Gradients accumulate into ``.grad``, so a parameter used
several times in one graph receives the sum of its contributions.
"""

from __future__ import annotations

import math
import os
import struct
from collections import OrderedDict
from contextlib import contextmanager

import numpy as np

DEBUG = os.environ.get("POINTATTN_DEBUG", "") not in ("", "0")
_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class KinkProbe:
    """Smallest nonzero |input| seen by relu / leaky_relu inside :func:`kink_probe`.

    Exact zeros are skipped: they come from padded self-edges, whose offsets
    stay zero under any perturbation.
    """

    def __init__(self):
        self.margin = math.inf

    def observe(self, v):
        a = np.abs(v[v != 0])
        if a.size:
            self.margin = min(self.margin, float(a.min()))


_PROBES = []


@contextmanager
def kink_probe():
    probe = KinkProbe()
    _PROBES.append(probe)
    try:
        yield probe
    finally:
        _PROBES.remove(probe)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.value) if requires_grad and not parents else None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        if DEBUG and not np.all(np.isfinite(self.value)):
            raise FloatingPointError(f"non-finite output from {op}")

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward_fn, op):
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(value, True, parents, backward_fn, op)
    return Tensor(value, op=op)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(root: Tensor, seed=None) -> None:
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``.grad``."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(root): np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if DEBUG and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at {node.op}")
        if not node.parents:
            node._accum(g)
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


# ---------------------------------------------------------------- ops


def matmul(a, b) -> Tensor:
    """``a @ b``; ``a`` may carry leading batch axes, ``b`` is 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0] or b.value.ndim != 2:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def bw(g):
        ga = g @ bv.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _node(av @ bv, (a, b), bw, "matmul")


def matmul_nt(a, b) -> Tensor:
    """``a @ b.T`` for 2-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"matmul_nt shape mismatch: {a.shape} @ {b.shape}^T")
    av, bv = a.value, b.value

    def bw(g):
        return (g @ bv if a.requires_grad else None, g.T @ av if b.requires_grad else None)

    return _node(av @ bv.T, (a, b), bw, "matmul_nt")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def bw(g):
        return (
            _unbroadcast(g * bv, av.shape) if a.requires_grad else None,
            _unbroadcast(g * av, bv.shape) if b.requires_grad else None,
        )

    return _node(av * bv, (a, b), bw, "mul")


def relu(x) -> Tensor:
    x = as_tensor(x)
    if _PROBES:
        _PROBES[-1].observe(x.value)
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x, slope=0.2) -> Tensor:
    x = as_tensor(x)
    if _PROBES:
        _PROBES[-1].observe(x.value)
    scale = np.where(x.value > 0, 1.0, slope)
    return _node(x.value * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def softmax_values(z: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max subtraction."""
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def row_softmax(x) -> Tensor:
    x = as_tensor(x)
    s = softmax_values(x.value)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (x,), bw, "softmax")


def gather_rows(x, idx) -> Tensor:
    """``x[idx]`` for a 2-D ``x``; output shape ``idx.shape + (C,)``."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]

    def bw(g):
        from .spatial import kernels

        flat = np.ascontiguousarray(g.reshape(-1, g.shape[-1]))
        return (kernels().scatter_rows(flat, np.ascontiguousarray(idx.reshape(-1)), n),)

    return _node(x.value[idx], (x,), bw, "gather")


def sum_axis(x, axis) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(x.value.sum(axis=axis), (x,), bw, "sum")


def expand_last(x) -> Tensor:
    """Append a unit axis (N x K -> N x K x 1)."""
    x = as_tensor(x)
    return _node(x.value[..., None], (x,), lambda g: (g[..., 0],), "expand")


def concat(xs, axis=-1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _node(np.concatenate([x.value for x in xs], axis=axis), xs, bw, "concat")


def dot_last(x, v) -> Tensor:
    """Contract the last axis of ``x`` with vector ``v``."""
    x, v = as_tensor(x), as_tensor(v)
    xv, vv = x.value, v.value

    def bw(g):
        gx = g[..., None] * vv if x.requires_grad else None
        gv = (g[..., None] * xv).reshape(-1, xv.shape[-1]).sum(axis=0) if v.requires_grad else None
        return gx, gv

    return _node(xv @ vv, (x, v), bw, "dot")


def mlp_layer(x, weight, bias, activation="relu") -> Tensor:
    """``activation(x @ weight + bias)``; activation is ``relu`` or ``none``."""
    y = add(matmul(x, weight), bias)
    if activation == "relu":
        return relu(y)
    if activation in ("none", None):
        return y
    raise ValueError(f"unknown activation {activation!r}")


def cross_entropy(logits, targets, class_weights=None) -> Tensor:
    """Mean (optionally class-weighted) negative log-likelihood of ``targets``."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    if t.shape != (n,):
        raise ValueError(f"targets must have shape ({n},), got {t.shape}")
    if n and (t.min() < 0 or t.max() >= c):
        raise ValueError(f"target outside [0, {c})")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nll = lse - z[np.arange(n), t]
    w = np.ones(n) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[t]
    wsum = w.sum()
    loss = float((w * nll).sum() / wsum)

    def bw(g):
        p = softmax_values(logits.value)
        p[np.arange(n), t] -= 1.0
        return (g * p * (w / wsum)[:, None],)

    return _node(np.array(loss), (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------- parameters


def glorot(rng, fan_in, fan_out, shape=None):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))


class ParameterStore:
    """Named parameters with Adam/momentum state."""

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.m: dict = {}
        self.v: dict = {}
        self.step = 0

    def add(self, name, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = np.zeros_like(t.value)

    def grad_norm(self) -> float:
        return math.sqrt(sum(float((t.grad * t.grad).sum()) for t in self.params.values()))

    def num_values(self) -> int:
        return sum(t.value.size for t in self.params.values())

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.value.copy()) for k, t in self.params.items())

    def load_state(self, arrays, strict=True):
        if strict and set(arrays) != set(self.params):
            missing = set(self.params) - set(arrays)
            extra = set(arrays) - set(self.params)
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, a in arrays.items():
            if k not in self.params:
                continue
            if a.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {a.shape} vs {self.params[k].shape}")
            self.params[k].value[...] = a


def optimizer_step(store: ParameterStore, lr, betas=(0.9, 0.999), eps=1e-8, kind="adam"):
    """Update every parameter in place from its gradient, then zero the gradients."""
    b1, b2 = betas
    store.step += 1
    t = store.step
    for name, p in store.params.items():
        g = p.grad
        if kind == "adam":
            m = store.m[name]
            v = store.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            p.value -= lr * mhat / (np.sqrt(vhat) + eps)
        elif kind == "sgd":
            m = store.m[name]
            m *= b1
            m += g
            p.value -= lr * m
        else:
            raise ValueError(f"unknown optimizer {kind!r}")
        p.grad = np.zeros_like(p.value)


def lr_decay(epoch, initial_lr, decay_rate=0.7, step_epochs=40, floor=1e-5):
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return max(initial_lr * decay_rate ** (epoch // step_epochs), floor)


# ---------------------------------------------------------------- checkpoints

MAGIC = b"LAE1"


def save_checkpoint(arrays, path) -> None:
    """Binary little-endian dump: magic, count, then (name, rank, dims, values) records."""
    if isinstance(arrays, ParameterStore):
        arrays = arrays.state()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(arrays)))
        for name, a in arrays.items():
            a = np.ascontiguousarray(a, dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<Q", a.ndim))
            fh.write(np.asarray(a.shape, dtype="<i8").tobytes())
            fh.write(a.tobytes())


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    off = 4

    def take(n):
        nonlocal off
        if off + n > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        chunk = data[off:off + n]
        off += n
        return chunk

    (count,) = struct.unpack("<Q", take(8))
    out = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<Q", take(8))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        dims = tuple(int(d) for d in np.frombuffer(take(8 * rank), dtype="<i8"))
        size = int(np.prod(dims)) if dims else 1
        vals = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(dims)
        out[name] = vals
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return out
