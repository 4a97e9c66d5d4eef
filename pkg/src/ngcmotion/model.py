"""The joint prediction/recognition model and its configuration.

Variants (for the ablation harness):

* ``full``       encoder -> non-local attention -> both decoders;
* ``no-ngc``     the attention module is replaced by a learned per-frame
                 linear projection of the encoder output to pose shape;
* ``no-bilstm``  the encoder's bidirectional LSTM is replaced by a
                 unidirectional stack of the same hidden width, and the
                 value channel adapts to the narrower encoder output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import FEATURES_OUT, NonLocalAttention
from .encoder import HIDDEN_PER_JOINT, Encoder
from .graph import GRAPH_MODES, SkeletonTopology, adjacency_for_mode
from .layers import Linear, Module, select_frame
from .losses import combined_loss, prediction_loss
from .motion_decoder import MotionDecoder
from .recognition import RecognitionDecoder
from .tensor import Tensor, no_grad, reshape

VARIANTS = ("full", "no-ngc", "no-bilstm")


@dataclass
class ModelConfig:
    n_joints: int
    tau: int
    horizon: int
    labels: tuple
    edges: tuple
    graph_mode: str = "skeleton"
    shared_qk: bool = False
    variant: str = "full"

    def __post_init__(self):
        if self.tau < 2:
            raise ValueError("tau must be >= 2")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.graph_mode not in GRAPH_MODES:
            raise ValueError(f"graph_mode must be one of {GRAPH_MODES}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if len(self.labels) < 1:
            raise ValueError("need at least one label")
        self.labels = tuple(self.labels)
        self.edges = tuple((int(i), int(j)) for i, j in self.edges)

    @property
    def num_labels(self):
        return len(self.labels)

    def topology(self):
        return SkeletonTopology(self.n_joints, self.edges)

    def to_dict(self):
        return {
            "n_joints": self.n_joints,
            "tau": self.tau,
            "horizon": self.horizon,
            "labels": list(self.labels),
            "edges": [list(e) for e in self.edges],
            "graph_mode": self.graph_mode,
            "shared_qk": self.shared_qk,
            "variant": self.variant,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            n_joints=int(d["n_joints"]),
            tau=int(d["tau"]),
            horizon=int(d["horizon"]),
            labels=tuple(d["labels"]),
            edges=tuple((int(i), int(j)) for i, j in d["edges"]),
            graph_mode=d.get("graph_mode", "skeleton"),
            shared_qk=bool(d.get("shared_qk", False)),
            variant=d.get("variant", "full"),
        )


class JointModel(Module):
    def __init__(self, config, rng):
        self.config = config
        adjacency = adjacency_for_mode(config.topology(), config.graph_mode)
        bidirectional = config.variant != "no-bilstm"
        self.encoder = Encoder(adjacency, config.tau, rng, bidirectional=bidirectional)
        out_per_joint = self.encoder.output_width // config.n_joints
        if config.variant == "no-ngc":
            self.attention = None
            self.context_proj = Linear(
                self.encoder.output_width, config.n_joints * FEATURES_OUT, rng
            )
        else:
            self.attention = NonLocalAttention(
                adjacency,
                config.tau,
                HIDDEN_PER_JOINT,
                out_per_joint,
                rng,
                shared_qk=config.shared_qk,
            )
            self.context_proj = None
        self.decoder = MotionDecoder(config.n_joints, rng)
        self.recognizer = RecognitionDecoder(
            config.tau, config.n_joints, config.num_labels, rng
        )
        self.assign_parameter_names()

    # -- forward pieces -------------------------------------------------

    def feature_map(self, x_prev, training):
        """x_prev: (tau, batch, N, 3) tensor -> (tau, batch, N, 3) feature map."""
        enc = self.encoder(x_prev, training)
        if self.attention is not None:
            return self.attention(enc, training)
        frames = enc.outputs()  # (tau, batch, width)
        tau, batch, _ = frames.shape
        proj = self.context_proj(frames)
        return reshape(proj, (tau, batch, self.config.n_joints, FEATURES_OUT))

    def training_losses(self, x_prev, x_fut, labels, *, lam, huber_beta=1.0,
                        penalty_weight=0.1, crf_alpha=1e-4, teacher_prob=1.0,
                        coin_rng=None):
        """Forward pass for one batch; returns (combined, pred, rec) scalars.

        x_prev: (tau, batch, N, 3); x_fut: (horizon, batch, N, 3);
        labels: one int per batch element.  Both branch losses are always
        computed; the combiner's weights decide what receives gradient.
        """
        x_prev_t = x_prev if isinstance(x_prev, Tensor) else Tensor(x_prev)
        fmap = self.feature_map(x_prev_t, training=True)
        x_last = _last_frame(x_prev_t)
        horizon = x_fut.shape[0]
        pred, _ = self.decoder.predict(
            fmap,
            x_last,
            horizon,
            teacher_prob=teacher_prob,
            ground_truth=x_fut,
            coin_rng=coin_rng,
        )
        loss_pred = prediction_loss(x_fut, pred, huber_beta, penalty_weight)
        loss_rec = self.recognizer.nll(fmap, labels, crf_alpha)
        return combined_loss(loss_pred, loss_rec, lam), loss_pred, loss_rec

    def predict_future(self, x_prev, horizon):
        """Inference rollout: (tau, batch, N, 3) array -> (horizon, batch, N, 3) array."""
        with no_grad():
            x_prev_t = Tensor(np.asarray(x_prev, dtype=np.float64))
            fmap = self.feature_map(x_prev_t, training=False)
            pred, _ = self.decoder.predict(fmap, _last_frame(x_prev_t), horizon)
        return pred.data

    def classify(self, x_prev):
        """Inference classification: (tau, batch, N, 3) array -> list of label indices."""
        with no_grad():
            x_prev_t = Tensor(np.asarray(x_prev, dtype=np.float64))
            fmap = self.feature_map(x_prev_t, training=False)
            return self.recognizer.classify(fmap)


def _last_frame(x_prev):
    tau = x_prev.shape[0]
    return select_frame(x_prev, tau - 1)


def build_model(config, seed):
    """Construct a model with parameters drawn from the init substream of seed."""
    from .tensor import substream

    return JointModel(config, substream(seed, "init"))
