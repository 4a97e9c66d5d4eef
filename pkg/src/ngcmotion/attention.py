"""Non-local attention over encoder frames, on graph-convolved features.

Three channels transform the encoder tensors frame by frame with residual
GCN blocks followed by a time-mixing convolution: queries and keys come
from the hidden states (per-joint widths 8 -> 4 -> 3), values from the
outputs (16 -> 8 -> 3).  Frame-level affinities are the softmax of the
scaled dot product between flattened per-frame query/key vectors; the
resulting (tau, tau) weights mix the value frames into a pose-shaped
feature map P of shape (tau, batch, N, 3).

With ``shared_qk`` the query and key channels share parameters, making the
pre-softmax score matrix a symmetric Gram matrix.
"""

from __future__ import annotations

import math

from .layers import Module, ResGcnBlock, TemporalConvBlock, stack_frames
from .tensor import matmul, reshape, scale, softmax_lastdim, transpose

FEATURES_OUT = 3  # per-joint width of Q, K, V and of the feature map


class ChannelTransform(Module):
    """Res-GCN (per frame) followed by a temporal conv over the stack."""

    def __init__(self, adjacency, in_per_joint, tau, rng):
        self.n_joints = adjacency.n_joints
        self.in_per_joint = in_per_joint
        self.tau = tau
        mid = max(FEATURES_OUT, in_per_joint // 2)
        self.rg = ResGcnBlock(adjacency, in_per_joint, mid, FEATURES_OUT, rng)
        self.tc = TemporalConvBlock(tau, rng)

    def __call__(self, seq, training):
        """seq: (tau, batch, N*in_per_joint) -> (tau, batch, N, 3)."""
        tau, batch, width = seq.shape
        if width != self.n_joints * self.in_per_joint:
            raise ValueError(
                f"attention channel expects width {self.n_joints * self.in_per_joint}, got {width}"
            )
        folded = reshape(seq, (tau * batch, self.n_joints, self.in_per_joint))
        spatial = self.rg(folded, training)  # (tau*batch, N, 3)
        stacked = reshape(spatial, (tau, batch, self.n_joints, FEATURES_OUT))
        return self.tc(stacked)


class NonLocalAttention(Module):
    def __init__(self, adjacency, tau, encoder_hidden_per_joint, encoder_out_per_joint,
                 rng, shared_qk=False):
        self.n_joints = adjacency.n_joints
        self.tau = tau
        self.shared_qk = shared_qk
        self.q_channel = ChannelTransform(adjacency, encoder_hidden_per_joint, tau, rng)
        self.k_channel = (
            self.q_channel
            if shared_qk
            else ChannelTransform(adjacency, encoder_hidden_per_joint, tau, rng)
        )
        self.v_channel = ChannelTransform(adjacency, encoder_out_per_joint, tau, rng)

    def _children(self):
        seen = set()
        for key, child in super()._children():
            if id(child) in seen:
                continue
            seen.add(id(child))
            yield key, child

    def __call__(self, enc, training):
        """enc: EncoderOutput -> feature map (tau, batch, N, 3)."""
        hidden = enc.hidden()  # (tau, batch, N*8)
        output = enc.outputs()  # (tau, batch, N*16)
        q = self.q_channel(hidden, training)
        k = q if self.shared_qk else self.k_channel(hidden, training)
        v = self.v_channel(output, training)

        tau, batch = q.shape[0], q.shape[1]
        width = self.n_joints * FEATURES_OUT
        qf = reshape(transpose(reshape(q, (tau, batch, width)), (1, 0, 2)), (batch, tau, width))
        kf = reshape(transpose(reshape(k, (tau, batch, width)), (1, 0, 2)), (batch, tau, width))
        vf = reshape(transpose(reshape(v, (tau, batch, width)), (1, 0, 2)), (batch, tau, width))

        logits = scale(matmul(qf, transpose(kf, (0, 2, 1))), 1.0 / math.sqrt(width))
        weights = softmax_lastdim(logits)  # (batch, tau, tau)
        mixed = matmul(weights, vf)  # (batch, tau, width)
        p = transpose(mixed, (1, 0, 2))  # (tau, batch, width)
        return reshape(p, (tau, batch, self.n_joints, FEATURES_OUT))


def attention_scores(q, k):
    """Frame-affinity matrix for one sequence: softmax(Q K^T / sqrt(width)).

    q, k: (tau, N, D) or (tau, width) tensors of equal shape.  The
    normalization is realized entirely as the pre-softmax logit scale
    1/sqrt(width); rows of the result sum to 1.
    """
    if q.shape != k.shape:
        raise ValueError(f"attention_scores: shapes differ, {q.shape} vs {k.shape}")
    tau = q.shape[0]
    qf = reshape(q, (tau, -1))
    kf = reshape(k, (tau, -1))
    width = qf.shape[1]
    logits = scale(matmul(qf, transpose(kf)), 1.0 / math.sqrt(width))
    return softmax_lastdim(logits)


__all__ = ["NonLocalAttention", "ChannelTransform", "attention_scores", "stack_frames"]
