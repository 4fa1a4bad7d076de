"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Every operation appends one node to the active :class:`Tape`; ``backward``
replays the tape in reverse insertion order.  The tape is thread-local, so
independent graphs can be built on separate threads.

    >>> x = Value([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = softmax(x)
    ...     loss = cross_entropy(y, 1)
    ...     tape.backward(loss)
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from memonet import kernels
from memonet.errors import ContractError, DimensionError, NumericError

LN_EPS = 1e-5
LOG_FLOOR = 1e-12

_state = threading.local()


class Value:
    """A dense float64 array plus its gradient slot."""

    __slots__ = ("data", "_grad", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self._grad = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.name = name

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = np.asarray(value, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self._grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Value{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return reduce_sum(self, axis)


@dataclass
class Node:
    op: str
    inputs: tuple
    output_id: int
    backward: Callable
    saved: dict = field(default_factory=dict)


class Tape:
    """Ordered record of the operations of one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._outputs: list[Value] = []
        self._prev = None

    def __enter__(self):
        self._prev = getattr(_state, "tape", None)
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev
        self._prev = None
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, op: str, inputs: Sequence[Value], out: Value, backward: Callable) -> Value:
        out.node_id = len(self.nodes)
        out.requires_grad = True
        self.nodes.append(Node(op, tuple(inputs), out.node_id, backward))
        self._outputs.append(out)
        return out

    def reset(self) -> None:
        self.nodes.clear()
        self._outputs.clear()

    def backward(self, loss: Value) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

        Intermediate gradients are recomputed per call, so calling twice
        without ``zero_grad`` doubles leaf gradients and nothing else.
        """
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node_id is None or loss.node_id >= len(self.nodes) \
                or self._outputs[loss.node_id] is not loss:
            if loss.requires_grad:
                loss.grad = loss.grad + 1.0
                return
            raise ContractError("loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for node in reversed(self.nodes[: loss.node_id + 1]):
            g = grads.pop(node.output_id, None)
            if g is None:
                continue
            self._outputs[node.output_id].grad = g
            in_grads = node.backward(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                gi = _unbroadcast(gi, inp.shape)
                nid = inp.node_id
                if nid is not None and nid < len(self._outputs) and self._outputs[nid] is inp:
                    prev = grads.get(nid)
                    grads[nid] = gi if prev is None else prev + gi
                else:
                    inp.grad = inp.grad + gi


def current_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = Tape()
        _state.tape = tape
    return tape


def backward(loss: Value) -> None:
    current_tape().backward(loss)


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextmanager
def count_macs():
    """Count multiply-accumulates of every op executed inside the block.

    Matrix products count m*k*n per batch entry; elementwise products count
    one per output element.
    """
    counter = {"macs": 0}
    prev = getattr(_state, "mac_counter", None)
    _state.mac_counter = counter
    try:
        yield counter
    finally:
        _state.mac_counter = prev


def _count(n: int) -> None:
    counter = getattr(_state, "mac_counter", None)
    if counter is not None:
        counter["macs"] += int(n)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _emit(op: str, inputs: Sequence[Value], data: np.ndarray, backward: Callable) -> Value:
    out = Value.__new__(Value)
    out.data = data
    out._grad = None
    out.requires_grad = False
    out.node_id = None
    out.name = None
    if grad_enabled() and any(v.requires_grad for v in inputs):
        current_tape().record(op, inputs, out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Value, b: Value, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not match") from None


# ----------------------------------------------------------------- arithmetic


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "add")
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "sub")
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_broadcast(a, b, "mul")
    out = a.data * b.data
    _count(out.size)
    return _emit("mul", (a, b), out, lambda g: (g * b.data, g * a.data))


def scale(a: Value, c: float) -> Value:
    _count(a.data.size)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def matmul(a, b) -> Value:
    """Matrix product with numpy semantics for leading batch axes.

    1-D operands are promoted to a row (left) or column (right) vector.
    """
    a, b = as_value(a), as_value(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    if a.ndim == 1:
        out = matmul(reshape(a, (1, a.shape[0])), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if b.ndim == 1:
        out = matmul(a, reshape(b, (b.shape[0], 1)))
        return reshape(out, out.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not match") from None
    _count(out.size * a.shape[-1])

    def bw(g):
        return (np.matmul(g, np.swapaxes(b.data, -1, -2)),
                np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _emit("matmul", (a, b), out, bw)


def reduce_sum(a: Value, axis=None, keepdims: bool = False) -> Value:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("sum", (a,), np.asarray(out, dtype=np.float64), bw)


def mean(a: Value, axis=None) -> Value:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis), 1.0 / n)


def exp(a: Value) -> Value:
    out = np.exp(a.data)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def log(a: Value, floor: float = LOG_FLOOR) -> Value:
    """Natural log with the input clamped below at ``floor``."""
    clamped = np.maximum(a.data, floor)
    return _emit("log", (a,), np.log(clamped),
                 lambda g: (np.where(a.data > floor, g / clamped, 0.0),))


def square(a: Value) -> Value:
    _count(a.data.size)
    return _emit("square", (a,), a.data * a.data, lambda g: (2.0 * g * a.data,))


# --------------------------------------------------------------- nonlinearity


def relu(a: Value) -> Value:
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Value) -> Value:
    out = _sigmoid(a.data)
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a: Value) -> Value:
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return _emit("log_sigmoid", (a,), out, lambda g: (g * _sigmoid(-x),))


def tanh(a: Value) -> Value:
    out = np.tanh(a.data)
    return _emit("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def softmax(x: Value, axis: int = -1) -> Value:
    """Softmax along ``axis`` (max-subtracted)."""
    x = as_value(x)
    if x.data.size == 0 or x.shape[axis] < 1:
        raise DimensionError(f"softmax over empty axis, shape {x.shape}")
    if np.isnan(x.data).any():
        raise NumericError("softmax: NaN input")
    moved = np.moveaxis(x.data, axis, -1)
    flat = np.ascontiguousarray(moved.reshape(-1, moved.shape[-1]))
    y2 = kernels.softmax_rows_forward(flat)
    out = np.moveaxis(y2.reshape(moved.shape), -1, axis)

    def bw(g):
        gm = np.ascontiguousarray(np.moveaxis(g, axis, -1).reshape(y2.shape))
        gx = kernels.softmax_rows_backward(y2, gm)
        return (np.moveaxis(gx.reshape(moved.shape), -1, axis),)

    return _emit("softmax", (x,), out, bw)


def layer_norm(x: Value, gain: Value, bias: Value, eps: float = LN_EPS) -> Value:
    """Normalise the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_value(x), as_value(gain), as_value(bias)
    n = x.shape[-1] if x.ndim else 0
    if n < 2:
        raise DimensionError(f"layer_norm needs width >= 2, got shape {x.shape}")
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {n}")
    flat = np.ascontiguousarray(x.data.reshape(-1, n))
    y, xhat, inv_std = kernels.layernorm_rows_forward(
        flat, np.ascontiguousarray(gain.data), np.ascontiguousarray(bias.data), eps)
    _count(y.size)

    def bw(g):
        gx, gg, gb = kernels.layernorm_rows_backward(
            np.ascontiguousarray(g.reshape(-1, n)), xhat, inv_std,
            np.ascontiguousarray(gain.data))
        return gx.reshape(x.shape), gg, gb

    return _emit("layer_norm", (x, gain, bias), y.reshape(x.shape), bw)


def dropout(x: Value, rate: float, training: bool, rng: np.random.Generator | None) -> Value:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an explicit generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    _count(mask.size)
    return _emit("dropout", (x,), x.data * mask, lambda g: (g * mask,))


def cross_entropy(probs: Value, target) -> Value:
    """Mean of -log p[target] over leading axes; log clamped at 1e-12."""
    probs = as_value(probs)
    target = np.asarray(target, dtype=np.int64)
    n_cls = probs.shape[-1]
    if target.shape != probs.shape[:-1]:
        raise DimensionError(f"cross_entropy: targets {target.shape} vs probs {probs.shape}")
    if (target < 0).any() or (target >= n_cls).any():
        raise IndexError(f"cross_entropy: target out of range [0, {n_cls})")
    flat = probs.data.reshape(-1, n_cls)
    t = target.reshape(-1)
    rows = np.arange(flat.shape[0])
    picked = flat[rows, t]
    clamped = np.maximum(picked, LOG_FLOOR)
    m = flat.shape[0]
    out = np.asarray(-np.log(clamped).mean())

    def bw(g):
        gp = np.zeros_like(flat)
        gp[rows, t] = np.where(picked > LOG_FLOOR, -float(g) / (clamped * m), 0.0)
        return (gp.reshape(probs.shape),)

    return _emit("cross_entropy", (probs,), out, bw)


# ------------------------------------------------------------- shape plumbing


def reshape(x: Value, shape) -> Value:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from None
    return _emit("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def flatten(x: Value, start: int = -2) -> Value:
    """Merge axes ``start..-1`` into one (row-major vec)."""
    start = start % x.ndim
    return reshape(x, x.shape[:start] + (int(np.prod(x.shape[start:])),))


def unflatten(x: Value, shape) -> Value:
    """Inverse of :func:`flatten`: split the last axis into ``shape``."""
    shape = tuple(shape)
    if int(np.prod(shape)) != x.shape[-1]:
        raise DimensionError(f"unflatten: last axis {x.shape[-1]} cannot become {shape}")
    return reshape(x, x.shape[:-1] + shape)


def transpose(x: Value) -> Value:
    return _emit("transpose", (x,), np.swapaxes(x.data, -1, -2),
                 lambda g: (np.swapaxes(g, -1, -2),))


def concat(values: Sequence[Value], axis: int = -1) -> Value:
    values = [as_value(v) for v in values]
    try:
        out = np.concatenate([v.data for v in values], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: shapes {[v.shape for v in values]} differ off axis {axis}") from None
    sizes = np.cumsum([v.shape[axis] for v in values])[:-1]
    return _emit("concat", values, out, lambda g: tuple(np.split(g, sizes, axis=axis)))


def take(x: Value, index) -> Value:
    """Basic or advanced indexing, with scatter-add in the backward pass."""
    out = x.data[index]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _emit("take", (x,), np.array(out, dtype=np.float64), bw)


def take_rows(table: Value, ids) -> Value:
    """Rows of a 2-D table gathered by an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _emit("take_rows", (table,), out, bw)


# ------------------------------------------------------------------- checking


def numeric_gradient(fn: Callable[[], Value], param: Value, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``param.data``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(fn().data)
            flat[i] = orig - eps
            down = float(fn().data)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), with 0 when both vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom < 1e-300:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def gradcheck(fn: Callable[[], Value], params: Sequence[Value], eps: float = 1e-5) -> dict:
    """Relative error of tape gradients vs finite differences, per parameter."""
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
        tape.backward(loss)
    report = {}
    for i, p in enumerate(params):
        num = numeric_gradient(fn, p, eps)
        report[p.name or f"param{i}"] = relative_error(p.grad, num)
    return report
