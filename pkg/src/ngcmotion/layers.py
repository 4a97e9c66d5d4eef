"""Reusable network layers built on the tensor primitives.

Fully connected, graph convolution (with batchnorm), residual GCN blocks,
time-mixing convolution blocks, LSTM cells and stacked (bi)directional
LSTMs, plus the two pooling helpers.  Layers hold their trainable tensors
as attributes; ``Module`` provides recursive named-parameter/buffer
traversal for the optimizer and checkpointing.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    Tensor,
    add,
    batchnorm,
    concat,
    constant,
    matmul,
    mul,
    reduce_max,
    relu,
    reshape,
    sigmoid,
    tanh,
    transpose,
    uniform_param,
)


class Module:
    """Base class giving recursive parameter and buffer discovery."""

    def _children(self):
        for key in self.__dict__:
            val = self.__dict__[key]
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix=""):
        for key in self.__dict__:
            val = self.__dict__[key]
            if isinstance(val, Tensor) and val.requires_grad:
                yield f"{prefix}{key}", val
        for key, child in self._children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix=""):
        """Non-trainable state arrays (running statistics)."""
        for key in self.__dict__:
            val = self.__dict__[key]
            if isinstance(val, np.ndarray):
                yield f"{prefix}{key}", val
        for key, child in self._children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def assign_parameter_names(self, prefix=""):
        """Stamp hierarchical names onto parameter tensors (for Adam/checkpoints)."""
        for name, p in self.named_parameters(prefix):
            p.name = name


class Linear(Module):
    """Dense map on the last axis: y = x W (+ b)."""

    def __init__(self, in_features, out_features, rng, bias=True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = uniform_param((in_features, out_features), in_features, rng)
        self.bias = uniform_param((out_features,), in_features, rng) if bias else None

    def __call__(self, x):
        lead = x.shape[:-1]
        flat = reshape(x, (-1, self.in_features)) if x.ndim != 2 else x
        out = matmul(flat, self.weight)
        if self.bias is not None:
            out = add(out, self.bias)
        if x.ndim != 2:
            out = reshape(out, lead + (self.out_features,))
        return out


class BatchNorm(Module):
    """Batch normalization over all leading axes, per trailing channel."""

    def __init__(self, num_features, momentum=0.1, eps=1e-5):
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(num_features), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features), requires_grad=True)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def __call__(self, x, training):
        return batchnorm(
            x,
            self.gamma,
            self.beta,
            running_mean=self.running_mean,
            running_var=self.running_var,
            training=training,
            momentum=self.momentum,
            eps=self.eps,
        )


class GcnLayer(Module):
    """One graph convolution: ReLU(batchnorm(A_norm x W)).

    ``adjacency`` is the normalized (N, N) matrix; x is (batch, N, in_f).
    The joint axis is preserved, only features are transformed.  ``use_bn``
    False bypasses batch normalization (debug/identity checks).
    """

    def __init__(self, adjacency, in_features, out_features, rng, use_bn=True):
        self.in_features = in_features
        self.out_features = out_features
        self.adjacency = constant(adjacency.matrix)
        self.weight = uniform_param((in_features, out_features), in_features, rng)
        self.bn = BatchNorm(out_features) if use_bn else None

    def __call__(self, x, training):
        if x.shape[-1] != self.in_features:
            raise ValueError(
                f"gcn: expected {self.in_features} input features, got {x.shape[-1]}"
            )
        mixed = matmul(self.adjacency, x)  # (batch, N, in_f)
        out = matmul(mixed, self.weight)
        if self.bn is not None:
            out = self.bn(out, training)
        return relu(out)


class ResGcnBlock(Module):
    """Two stacked GCN layers with a residual skip.

    The skip is the identity when in/out widths match, otherwise a learned
    per-joint linear projection.
    """

    def __init__(self, adjacency, in_features, mid_features, out_features, rng, use_bn=True):
        self.gcn1 = GcnLayer(adjacency, in_features, mid_features, rng, use_bn)
        self.gcn2 = GcnLayer(adjacency, mid_features, out_features, rng, use_bn)
        self.skip = (
            None
            if in_features == out_features
            else Linear(in_features, out_features, rng, bias=False)
        )

    def __call__(self, x, training):
        h = self.gcn2(self.gcn1(x, training), training)
        s = x if self.skip is None else self.skip(x)
        return add(h, s)


class TemporalConvBlock(Module):
    """Two 1x1 convolutions mixing the time axis: tau -> hidden -> tau.

    Weights are shared across every trailing position; x is (tau, ...).
    """

    def __init__(self, tau, rng, hidden=64):
        self.tau = tau
        self.hidden = hidden
        self.w1 = uniform_param((hidden, tau), tau, rng)
        self.w2 = uniform_param((tau, hidden), hidden, rng)

    def __call__(self, x):
        if x.shape[0] != self.tau:
            raise ValueError(f"temporal conv: expected {self.tau} frames, got {x.shape[0]}")
        trail = x.shape[1:]
        flat = reshape(x, (self.tau, -1))
        h = relu(matmul(self.w1, flat))
        out = relu(matmul(self.w2, h))
        return reshape(out, (self.tau,) + trail)


class ResCnnBlock(Module):
    """Temporal conv block plus identity skip; time length preserved."""

    def __init__(self, tau, rng, hidden=64):
        self.tc = TemporalConvBlock(tau, rng, hidden)

    def __call__(self, x):
        return add(self.tc(x), x)


class LstmCell(Module):
    """Single LSTM cell with separate weights and biases per gate."""

    GATES = ("i", "f", "g", "o")

    def __init__(self, input_size, hidden_size, rng):
        self.input_size = input_size
        self.hidden_size = hidden_size
        for gate in self.GATES:
            setattr(self, f"w_x{gate}", uniform_param((input_size, hidden_size), input_size, rng))
            setattr(self, f"w_h{gate}", uniform_param((hidden_size, hidden_size), hidden_size, rng))
            setattr(self, f"b_{gate}", uniform_param((hidden_size,), hidden_size, rng))

    def _gate(self, name, x, h):
        pre = add(
            add(matmul(x, getattr(self, f"w_x{name}")), matmul(h, getattr(self, f"w_h{name}"))),
            getattr(self, f"b_{name}"),
        )
        return pre

    def __call__(self, x, h, c):
        h2, c2, _ = self.forward_with_gates(x, h, c)
        return h2, c2

    def forward_with_gates(self, x, h, c):
        i = sigmoid(self._gate("i", x, h))
        f = sigmoid(self._gate("f", x, h))
        g = tanh(self._gate("g", x, h))
        o = sigmoid(self._gate("o", x, h))
        c2 = add(mul(f, c), mul(i, g))
        h2 = mul(o, tanh(c2))
        return h2, c2, {"i": i, "f": f, "g": g, "o": o}

    def zero_state(self, batch):
        z = np.zeros((batch, self.hidden_size))
        return constant(z), constant(z)


class LstmStack(Module):
    """Stacked LSTM over a (tau, batch, features) sequence.

    Bidirectional by default: each layer runs a forward and a backward cell
    and the next layer consumes the per-frame concatenation of both.  The
    stack returns:

    * outputs: per-frame concatenation [forward, backward] of the top layer,
      width 2*hidden (just the forward states, width hidden, when
      unidirectional);
    * hidden: per-frame sum of the two top-layer directions (the forward
      states when unidirectional), width hidden.
    """

    def __init__(self, input_size, hidden_size, num_layers, rng, bidirectional=True):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.bidirectional = bidirectional
        self.cells_fw = []
        self.cells_bw = []
        size = input_size
        for _ in range(num_layers):
            self.cells_fw.append(LstmCell(size, hidden_size, rng))
            if bidirectional:
                self.cells_bw.append(LstmCell(size, hidden_size, rng))
            size = hidden_size * (2 if bidirectional else 1)

    @property
    def output_size(self):
        return self.hidden_size * (2 if self.bidirectional else 1)

    def _run_direction(self, cell, frames, reverse):
        batch = frames[0].shape[0]
        h, c = cell.zero_state(batch)
        order = range(len(frames) - 1, -1, -1) if reverse else range(len(frames))
        out = [None] * len(frames)
        for t in order:
            h, c = cell(frames[t], h, c)
            out[t] = h
        return out

    def __call__(self, x):
        """x: (tau, batch, features) -> (outputs, hidden), both frame lists."""
        return self.forward_frames(split_frames(x))

    def forward_frames(self, frames):
        """frames: list of tau tensors, each (batch, features)."""
        layer_in = frames
        hidden_sum = None
        outputs = None
        for layer in range(self.num_layers):
            fw = self._run_direction(self.cells_fw[layer], layer_in, reverse=False)
            if self.bidirectional:
                bw = self._run_direction(self.cells_bw[layer], layer_in, reverse=True)
                layer_out = [concat([f, b], axis=-1) for f, b in zip(fw, bw)]
            else:
                bw = None
                layer_out = fw
            if layer == self.num_layers - 1:
                outputs = layer_out
                if self.bidirectional:
                    hidden_sum = [add(f, b) for f, b in zip(fw, bw)]
                else:
                    hidden_sum = fw
            layer_in = layer_out
        return outputs, hidden_sum


def stack_frames(frames):
    """List of tau (batch, F) tensors -> one (tau, batch, F) tensor."""
    expanded = [reshape(f, (1,) + f.shape) for f in frames]
    return concat(expanded, axis=0)


def split_frames(x):
    """(tau, batch, F) tensor -> list of tau (batch, F) tensors via selectors."""
    tau = x.shape[0]
    eye = np.eye(tau)
    flat = reshape(x, (tau, -1))
    out = []
    for t in range(tau):
        sel = constant(eye[t : t + 1])  # (1, tau)
        frame = matmul(sel, flat)  # (1, batch*F)
        out.append(reshape(frame, x.shape[1:]))
    return out


def select_frame(x, t):
    """Pick frame t of a (tau, ...) tensor through a differentiable selector."""
    tau = x.shape[0]
    sel = np.zeros((1, tau))
    sel[0, t] = 1.0
    frame = matmul(constant(sel), reshape(x, (tau, -1)))
    return reshape(frame, x.shape[1:])


def st_max_pool(x, joint_axis=-2):
    """Spatial pooling: max over the joint axis of a (..., N, F) map."""
    return reduce_max(x, axis=joint_axis)


def temporal_pair_pool(x):
    """Temporal max-pooling, kernel 2, stride 1, same length.

    out[t] = max(x[t], x[t+1]) with the final frame compared against
    itself (replicate padding).  Realized with a constant one-step shift
    matrix so the whole thing stays on the tape.
    """
    tau = x.shape[0]
    shift = np.zeros((tau, tau))
    for t in range(tau - 1):
        shift[t, t + 1] = 1.0
    shift[tau - 1, tau - 1] = 1.0
    trail = x.shape[1:]
    flat = reshape(x, (tau, -1))
    shifted = matmul(constant(shift), flat)
    stacked = concat([reshape(flat, (1, tau, -1)), reshape(shifted, (1, tau, -1))], axis=0)
    pooled = reduce_max(stacked, axis=0)
    return reshape(pooled, (tau,) + trail)
