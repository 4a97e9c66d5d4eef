"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation in the package is built from the primitives
in this module.  Operations execute eagerly on numpy arrays and, when any
input requires a gradient, append a record to the active tape.  The tape is
an ordered log of executed operations; because records are appended in
execution order they are automatically topologically sorted, and
``backward`` visits each record exactly once in reverse.

Gradients accumulate additively: calling ``backward`` twice, or using one
tensor in two places, sums the contributions.  Leaf tensors created with
``requires_grad=True`` carry a zero-initialised ``grad`` buffer so that
parameters untouched by a loss read as all-zero gradients.

Everything is float64.  Keep one tape (one training step) on one thread;
read-only tensors may be shared freely.
"""

from __future__ import annotations

import math
import os
import threading
import zlib
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class DetachedLossError(ValueError):
    """Raised when backward() is called on a tensor with no tape history."""


class MissingGradError(ValueError):
    """Raised when an optimizer step finds a parameter without a gradient."""


_DEBUG_CHECKS = os.environ.get("NGCMOTION_DEBUG", "0") not in ("", "0")


def set_debug_checks(enabled):
    """Toggle non-finite input assertions on every primitive (slow)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def _check_finite(op, *arrays):
    if _DEBUG_CHECKS:
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise AssertionError(f"{op}: non-finite values in input")


# ---------------------------------------------------------------------------
# tape machinery


class TapeRecord:
    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op, inputs, output, vjp):
        self.op = op
        self.inputs = inputs
        self.output = output
        # vjp(g) -> per-input gradient arrays (None for non-grad inputs).
        # vjp implementations must never mutate g.
        self.vjp = vjp


class Tape:
    """Ordered record of executed differentiable operations.

    Use as a context manager to scope one forward/backward pass::

        with Tape():
            loss = ...
            backward(loss)

    A module-level ambient tape exists for interactive use and small tests;
    ``reset_default_tape()`` clears it.
    """

    __slots__ = ("records",)

    def __init__(self):
        self.records = []

    def __enter__(self):
        _state().tapes.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _state().tapes.pop()
        return False

    def __len__(self):
        return len(self.records)


class _ThreadState(threading.local):
    """Per-thread tape stack: one training step runs on one thread."""

    def __init__(self):
        self.tapes = [Tape()]
        self.recording = [True]


_THREAD_STATE = _ThreadState()


def _state():
    return _THREAD_STATE


def reset_default_tape():
    _state().tapes[0].records.clear()


class no_grad:
    """Context manager that disables recording; outputs are constants."""

    def __enter__(self):
        _state().recording.append(False)
        return self

    def __exit__(self, exc_type, exc, tb):
        _state().recording.pop()
        return False


def _recording():
    return _state().recording[-1]


def _record(op, inputs, output, vjp):
    tape = _state().tapes[-1]
    output._tape = tape
    tape.records.append(TapeRecord(op, inputs, output, vjp))


# ---------------------------------------------------------------------------
# tensor


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # Leaves carry a zero grad buffer from the start; off-path
        # parameters therefore read as all-zero after backward().
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self.name = name
        self._tape = None

    @classmethod
    def _from_op(cls, data, requires_grad):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t._tape = None
        return t

    # -- introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        """Constant view of this tensor's data (shares the array)."""
        return Tensor._from_op(self.data, False)

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad[...] = 0.0

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # -- operator sugar (delegates to module-level primitives) ---------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def constant(data, name=None):
    return Tensor(data, requires_grad=False, name=name)


# ---------------------------------------------------------------------------
# helpers


def _unbroadcast(g, shape):
    """Sum gradient over axes that numpy broadcasting introduced."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g, in_shape, axis, keepdims):
    """Reshape a reduction gradient so it broadcasts back over in_shape."""
    if axis is None:
        return np.broadcast_to(g, in_shape)
    if not keepdims:
        shape = list(in_shape)
        for a in axis:
            shape[a] = 1
        g = g.reshape(shape)
    return np.broadcast_to(g, in_shape)


def _maybe_record(op, inputs, data, vjp_builder):
    req = _recording() and any(t.requires_grad for t in inputs)
    out = Tensor._from_op(data, req)
    if req:
        _record(op, inputs, out, vjp_builder(out))
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_finite("matmul", a.data, b.data)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"matmul: incompatible batch dimensions {a.shape} @ {b.shape}") from e

    def build(out):
        def vjp(g):
            ga = gb = None
            if a.requires_grad:
                ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
            if b.requires_grad:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
            return ga, gb

        return vjp

    return _maybe_record("matmul", (a, b), data, build)


def _broadcast_binop(op, a, b, fwd, dfa, dfb):
    a, b = as_tensor(a), as_tensor(b)
    _check_finite(op, a.data, b.data)
    try:
        data = fwd(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from e

    def build(out):
        def vjp(g):
            ga = _unbroadcast(dfa(g, a.data, b.data), a.shape) if a.requires_grad else None
            gb = _unbroadcast(dfb(g, a.data, b.data), b.shape) if b.requires_grad else None
            return ga, gb

        return vjp

    return _maybe_record(op, (a, b), data, build)


def add(a, b):
    return _broadcast_binop("add", a, b, lambda x, y: x + y,
                            lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _broadcast_binop("sub", a, b, lambda x, y: x - y,
                            lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _broadcast_binop("elementwise-mul", a, b, lambda x, y: x * y,
                            lambda g, x, y: g * y, lambda g, x, y: g * x)


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    _check_finite("scalar-mul", a.data)
    data = a.data * c

    def build(out):
        def vjp(g):
            return (g * c if a.requires_grad else None,)

        return vjp

    return _maybe_record("scalar-mul", (a,), data, build)


def relu(a):
    a = as_tensor(a)
    _check_finite("relu", a.data)
    data = np.maximum(a.data, 0.0)
    # Right-derivative at the kink: relu'(0) = 1.
    mask = a.data >= 0.0

    def build(out):
        def vjp(g):
            return (g * mask if a.requires_grad else None,)

        return vjp

    return _maybe_record("relu", (a,), data, build)


def sigmoid(a):
    a = as_tensor(a)
    _check_finite("sigmoid", a.data)
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def build(out):
        s = data

        def vjp(g):
            return (g * s * (1.0 - s) if a.requires_grad else None,)

        return vjp

    return _maybe_record("sigmoid", (a,), data, build)


def tanh(a):
    a = as_tensor(a)
    _check_finite("tanh", a.data)
    data = np.tanh(a.data)

    def build(out):
        t = data

        def vjp(g):
            return (g * (1.0 - t * t) if a.requires_grad else None,)

        return vjp

    return _maybe_record("tanh", (a,), data, build)


def exp(a):
    a = as_tensor(a)
    _check_finite("exp", a.data)
    data = np.exp(a.data)

    def build(out):
        e = data

        def vjp(g):
            return (g * e if a.requires_grad else None,)

        return vjp

    return _maybe_record("exp", (a,), data, build)


def log(a):
    a = as_tensor(a)
    _check_finite("log", a.data)
    if _DEBUG_CHECKS and np.any(a.data <= 0):
        raise AssertionError("log: non-positive input")
    data = np.log(a.data)

    def build(out):
        def vjp(g):
            return (g / a.data if a.requires_grad else None,)

        return vjp

    return _maybe_record("log", (a,), data, build)


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    _check_finite("power", a.data)
    if _DEBUG_CHECKS and p != int(p) and np.any(a.data < 0):
        raise AssertionError("power: negative base with non-integer exponent")
    data = a.data ** p

    def build(out):
        def vjp(g):
            return (g * p * a.data ** (p - 1.0) if a.requires_grad else None,)

        return vjp

    return _maybe_record("power", (a,), data, build)


def softmax_lastdim(a):
    a = as_tensor(a)
    _check_finite("softmax-lastdim", a.data)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def build(out):
        s = data

        def vjp(g):
            if not a.requires_grad:
                return (None,)
            dot = (g * s).sum(axis=-1, keepdims=True)
            return ((g - dot) * s,)

        return vjp

    return _maybe_record("softmax-lastdim", (a,), data, build)


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    _check_finite("sum", a.data)
    ax = _norm_axis(axis, a.ndim)
    data = a.data.sum(axis=ax, keepdims=keepdims)
    data = np.asarray(data, dtype=np.float64)

    def build(out):
        def vjp(g):
            if not a.requires_grad:
                return (None,)
            return (np.ascontiguousarray(_expand_reduced(g, a.shape, ax, keepdims)),)

        return vjp

    return _maybe_record("sum", (a,), data, build)


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    _check_finite("mean", a.data)
    ax = _norm_axis(axis, a.ndim)
    data = np.asarray(a.data.mean(axis=ax, keepdims=keepdims), dtype=np.float64)
    count = a.size if ax is None else int(np.prod([a.shape[i] for i in ax]))

    def build(out):
        def vjp(g):
            if not a.requires_grad:
                return (None,)
            return (np.ascontiguousarray(_expand_reduced(g, a.shape, ax, keepdims)) / count,)

        return vjp

    return _maybe_record("mean", (a,), data, build)


def reduce_max(a, axis=None, keepdims=False):
    a = as_tensor(a)
    _check_finite("max-reduce", a.data)
    ax = _norm_axis(axis, a.ndim)
    data = np.asarray(a.data.max(axis=ax, keepdims=keepdims), dtype=np.float64)
    # Subgradient at ties: every maximal element receives the full gradient
    # (right-derivative of max under upward perturbation of each argument).
    maxb = a.data.max(axis=ax, keepdims=True)
    mask = a.data == maxb

    def build(out):
        def vjp(g):
            if not a.requires_grad:
                return (None,)
            return (_expand_reduced(g, a.shape, ax, keepdims) * mask,)

        return vjp

    return _maybe_record("max-reduce", (a,), data, build)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    _check_finite("concat", *[t.data for t in tensors])
    nd = tensors[0].ndim
    ax = axis % nd
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != nd or [s for i, s in enumerate(other) if i != ax] != [
            s for i, s in enumerate(base) if i != ax
        ]:
            raise ShapeError(f"concat: shape {t.shape} incompatible with {tensors[0].shape} on axis {ax}")
    data = np.concatenate([t.data for t in tensors], axis=ax)
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def build(out):
        def vjp(g):
            pieces = np.split(g, offsets, axis=ax)
            return tuple(p if t.requires_grad else None for p, t in zip(pieces, tensors))

        return vjp

    return _maybe_record("concat", tuple(tensors), data, build)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from e
    in_shape = a.shape

    def build(out):
        def vjp(g):
            return (g.reshape(in_shape) if a.requires_grad else None,)

        return vjp

    return _maybe_record("reshape", (a,), data, build)


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: invalid axes {axes} for rank {a.ndim}")
    data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def build(out):
        def vjp(g):
            return (np.transpose(g, inverse) if a.requires_grad else None,)

        return vjp

    return _maybe_record("transpose", (a,), data, build)


def batchnorm(x, gamma, beta, running_mean=None, running_var=None,
              training=True, momentum=0.1, eps=1e-5):
    """Normalize over all leading axes, per trailing feature channel.

    ``gamma``/``beta`` have the shape of the last axis.  In training mode the
    batch statistics are used and the running buffers (plain arrays, updated
    in place) track them; in eval mode the running buffers are used, which
    keeps single-sample inference well defined.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _check_finite("batchnorm", x.data, gamma.data, beta.data)
    if x.ndim < 2:
        raise ShapeError(f"batchnorm: input must be at least 2-d, got {x.shape}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta must have shape ({c},), got {gamma.shape}/{beta.shape}")
    axes = tuple(range(x.ndim - 1))
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var
    else:
        if running_mean is None or running_var is None:
            raise ValueError("batchnorm: eval mode requires running statistics")
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    data = gamma.data * xhat + beta.data

    def build(out):
        def vjp(g):
            gx = gg = gb = None
            if gamma.requires_grad:
                gg = (g * xhat).sum(axis=axes)
            if beta.requires_grad:
                gb = g.sum(axis=axes)
            if x.requires_grad:
                if training:
                    gx = gamma.data * inv * (
                        g - g.mean(axis=axes) - xhat * (g * xhat).mean(axis=axes)
                    )
                else:
                    gx = g * gamma.data * inv
            return gx, gg, gb

        return vjp

    return _maybe_record("batchnorm", (x, gamma, beta), data, build)


def custom_op(name, inputs, data, vjp):
    """Register an externally computed differentiable operation.

    ``vjp(g)`` must return one gradient array (or None) per input.  Used for
    operations whose forward/backward pairs are computed outside the
    primitive set (dynamic programs, fused losses).
    """
    inputs = tuple(as_tensor(t) for t in inputs)
    data = np.asarray(data, dtype=np.float64)
    req = _recording() and any(t.requires_grad for t in inputs)
    out = Tensor._from_op(data, req)
    if req:
        _record(name, inputs, out, vjp)
    return out


_PRIMITIVES = {
    "matmul": lambda inputs, **kw: matmul(*inputs),
    "add": lambda inputs, **kw: add(*inputs),
    "sub": lambda inputs, **kw: sub(*inputs),
    "elementwise-mul": lambda inputs, **kw: mul(*inputs),
    "scalar-mul": lambda inputs, c=2.0, **kw: scale(inputs[0], c),
    "relu": lambda inputs, **kw: relu(*inputs),
    "sigmoid": lambda inputs, **kw: sigmoid(*inputs),
    "tanh": lambda inputs, **kw: tanh(*inputs),
    "softmax-lastdim": lambda inputs, **kw: softmax_lastdim(*inputs),
    "exp": lambda inputs, **kw: exp(*inputs),
    "log": lambda inputs, **kw: log(*inputs),
    "sum": lambda inputs, axis=None, keepdims=False, **kw: reduce_sum(inputs[0], axis, keepdims),
    "mean": lambda inputs, axis=None, keepdims=False, **kw: reduce_mean(inputs[0], axis, keepdims),
    "max-reduce": lambda inputs, axis=None, keepdims=False, **kw: reduce_max(inputs[0], axis, keepdims),
    "concat": lambda inputs, axis=0, **kw: concat(list(inputs), axis),
    "reshape": lambda inputs, shape=None, **kw: reshape(inputs[0], shape),
    "transpose": lambda inputs, axes=None, **kw: transpose(inputs[0], axes),
    "batchnorm": lambda inputs, **kw: batchnorm(*inputs, **kw),
    "power": lambda inputs, p=2.0, **kw: power(inputs[0], p),
}

OP_KINDS = tuple(_PRIMITIVES)


def forward_primitive(op_kind, inputs, **kwargs):
    """Dispatch by op-kind name; the table above is the supported set."""
    try:
        fn = _PRIMITIVES[op_kind]
    except KeyError:
        raise ValueError(f"unknown op kind {op_kind!r}") from None
    return fn(inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward


def backward(loss):
    """Populate ``grad`` of every tensor the loss depends on.

    The loss must be a scalar produced by taped operations.  Gradients are
    accumulated (added) into existing ``grad`` buffers.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise DetachedLossError("loss is not connected to a tape (no recorded operations)")

    # pending[id] = [tensor, grad array, owned], complete once the record
    # producing the tensor is visited.
    pending = {id(loss): [loss, np.ones_like(loss.data), True]}

    for rec in reversed(tape.records):
        entry = pending.pop(id(rec.output), None)
        if entry is None:
            continue
        _, g_out, _ = entry
        out = rec.output
        out.grad = g_out.copy() if out.grad is None else out.grad + g_out
        for t, g in zip(rec.inputs, rec.vjp(g_out)):
            if g is None or not t.requires_grad:
                continue
            slot = pending.get(id(t))
            if slot is None:
                pending[id(t)] = [t, g, False]
            elif slot[2]:
                slot[1] += g
            else:
                slot[1] = slot[1] + g
                slot[2] = True

    # Whatever remains was produced by no record on this tape: leaves.
    for t, g, _ in pending.values():
        if t.grad is None:
            t.grad = g.copy()
        else:
            t.grad += g


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Adam optimizer state: per-parameter moments plus hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _param_key(param, index):
    return param.name if param.name else f"param{index}"


def adam_step(params, state):
    """One Adam update with bias correction; zeroes grads afterwards.

    Tensors with ``requires_grad=False`` are skipped (frozen).  Raises
    ``MissingGradError`` when a trainable parameter has no grad buffer.
    """
    params = list(params)
    for i, p in enumerate(params):
        if p.requires_grad and p.grad is None:
            raise MissingGradError(f"parameter {_param_key(p, i)} has no gradient")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for i, p in enumerate(params):
        if not p.requires_grad:
            continue
        key = _param_key(p, i)
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p.grad[...] = 0.0


# ---------------------------------------------------------------------------
# seeded randomness


def substream(seed, label):
    """Independent generator for a named purpose under one master seed."""
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


def uniform_param(shape, fan_in, rng, name=None):
    """Parameter initialised uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(max(1, fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)
