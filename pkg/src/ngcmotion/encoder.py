"""Graph-convolutional recurrent encoder for observed pose windows.

Pipeline per Eq.-style composition: a per-joint fully connected embedding
(3 -> 3, shared across joints and frames), one graph convolution over the
normalized skeleton adjacency, then a 4-layer bidirectional LSTM over time.

Returns per-frame outputs O (forward/backward concatenation, width
``n_joints * 16``) and hidden states H (forward+backward sum, width
``n_joints * 8``).
"""

from __future__ import annotations

from dataclasses import dataclass

from .layers import GcnLayer, Linear, LstmStack, Module, split_frames, stack_frames
from .tensor import Tensor, reshape

HIDDEN_PER_JOINT = 8


@dataclass
class EncoderOutput:
    """outputs: (tau, batch, N*16); hidden: (tau, batch, N*8), as frame lists."""

    output_frames: list  # tau tensors, each (batch, N*16)  [or N*8 unidirectional]
    hidden_frames: list  # tau tensors, each (batch, N*8)

    @property
    def tau(self):
        return len(self.output_frames)

    def outputs(self):
        return stack_frames(self.output_frames)

    def hidden(self):
        return stack_frames(self.hidden_frames)


class Encoder(Module):
    def __init__(self, adjacency, tau, rng, num_layers=4, bidirectional=True):
        self.n_joints = adjacency.n_joints
        self.tau = tau
        self.bidirectional = bidirectional
        self.embed = Linear(3, 3, rng)
        self.gcn = GcnLayer(adjacency, 3, 3, rng)
        self.lstm = LstmStack(
            self.n_joints * 3,
            self.n_joints * HIDDEN_PER_JOINT,
            num_layers,
            rng,
            bidirectional=bidirectional,
        )

    @property
    def output_width(self):
        return self.lstm.output_size

    @property
    def hidden_width(self):
        return self.lstm.hidden_size

    def __call__(self, x_prev, training):
        """x_prev: (tau, batch, N, 3) tensor of observed poses."""
        if not isinstance(x_prev, Tensor):
            x_prev = Tensor(x_prev)
        tau, batch, n, c = x_prev.shape
        if tau != self.tau or n != self.n_joints or c != 3:
            raise ValueError(
                f"encoder expects (tau={self.tau}, batch, joints={self.n_joints}, 3), got {x_prev.shape}"
            )
        if tau < 2:
            raise ValueError("encoder needs at least 2 observed frames")
        embedded = self.embed(x_prev)  # per-joint 3 -> 3
        folded = reshape(embedded, (tau * batch, n, 3))
        graph_feat = self.gcn(folded, training)  # (tau*batch, N, 3)
        seq = reshape(graph_feat, (tau, batch, n * 3))
        out_frames, hidden_frames = self.lstm.forward_frames(split_frames(seq))
        return EncoderOutput(out_frames, hidden_frames)
