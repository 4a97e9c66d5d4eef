"""Action-recognition head: feature augmentation, classifier trunk, chain CRF.

The attention feature map is augmented with a temporal-semantics channel (a
residual CNN over the normalized frame-index ramp), max-pooled over joints,
lifted to the trunk width and passed through two feature-mixing layers
interleaved with stride-1 temporal max-pooling.  A linear projection yields
per-frame label scores; a linear-chain CRF with a learned transition matrix
scores label sequences.

CRF inference (partition function, marginals, Viterbi) runs in the
dynamic-programming kernels of ``_kernels``; the log-partition enters the
autodiff tape as a custom operation whose backward pass is the
forward-backward marginal computation.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .layers import Linear, Module, ResCnnBlock, st_max_pool, temporal_pair_pool
from .tensor import (
    add,
    constant,
    custom_op,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    transpose,
    uniform_param,
)

TRUNK_PER_JOINT = 8
TRUNK_OUT_PER_JOINT = 16


class FeatureAugment(Module):
    """Add temporal semantics: residual CNN over the frame-index ramp."""

    def __init__(self, tau, n_joints, rng):
        self.tau = tau
        self.n_joints = n_joints
        self.rescnn = ResCnnBlock(tau, rng)
        ramp = np.arange(1, tau + 1, dtype=np.float64) / tau
        self.index_map = np.broadcast_to(
            ramp[:, None, None], (tau, n_joints, 3)
        ).copy()

    def __call__(self, feature_map):
        """feature_map: (tau, batch, N, 3) -> same shape."""
        semantics = self.rescnn(constant(self.index_map))  # (tau, N, 3)
        batch = feature_map.shape[1]
        expanded = reshape(semantics, (self.tau, 1, self.n_joints, 3))
        return add(feature_map, expanded)


class ClassifierTrunk(Module):
    """Joint pooling, lift to N*8, two mixing layers to N*16 with pooling."""

    def __init__(self, tau, n_joints, rng):
        self.tau = tau
        self.n_joints = n_joints
        mid = n_joints * TRUNK_PER_JOINT
        out = n_joints * TRUNK_OUT_PER_JOINT
        self.lift = Linear(3, mid, rng)
        self.mix1 = Linear(mid, out, rng)
        self.mix2 = Linear(out, out, rng)

    @property
    def out_width(self):
        return self.n_joints * TRUNK_OUT_PER_JOINT

    def __call__(self, aug):
        """aug: (tau, batch, N, 3) -> (tau, batch, N*16)."""
        pooled = st_max_pool(aug, joint_axis=2)  # (tau, batch, 3)
        lifted = relu(self.lift(pooled))  # (tau, batch, N*8)
        h = temporal_pair_pool(relu(self.mix1(lifted)))
        h = temporal_pair_pool(relu(self.mix2(h)))
        return h


class CrfModel(Module):
    """Linear-chain CRF over per-frame features.

    Potentials are exp(unary_t(y_t) + transition[y_{t-1}, y_t]) with no
    transition term at the first frame.  The unary projection maps trunk
    features to one score per label.
    """

    def __init__(self, feature_width, num_labels, rng):
        if num_labels < 1:
            raise ValueError("need at least one label")
        self.num_labels = num_labels
        self.proj = Linear(feature_width, num_labels, rng)
        self.transition = uniform_param((num_labels, num_labels), num_labels, rng)

    def unary_scores(self, features):
        """features: (tau, F) or (tau, batch, F) -> matching (..., L) scores."""
        return self.proj(features)


def crf_log_partition(crf, features):
    """log Z by the forward algorithm, differentiable wrt features and transitions.

    ``features``: (tau, F) for one sequence.  The backward pass uses
    forward-backward marginals: d logZ / d unary = node marginals,
    d logZ / d transition = summed edge marginals.
    """
    unary = crf.unary_scores(features)
    return _log_partition_from_unary(unary, crf.transition)


def _log_partition_from_unary(unary, transition):
    u = unary.data
    w = transition.data
    logz, _ = _kernels.crf_log_partition(u, w)

    def vjp(g):
        gs = float(g)
        _, node, edge = _kernels.crf_marginals(u, w)
        gu = gs * node if unary.requires_grad else None
        gw = gs * edge if transition.requires_grad else None
        return gu, gw

    return custom_op("crf-log-partition", (unary, transition), np.float64(logz), vjp)


def _path_score(unary, transition, labels):
    tau, L = unary.shape
    onehot = np.zeros((tau, L))
    onehot[np.arange(tau), labels] = 1.0
    counts = np.zeros((L, L))
    for t in range(1, tau):
        counts[labels[t - 1], labels[t]] += 1.0
    unary_term = mul(unary, constant(onehot)).sum()
    trans_term = mul(transition, constant(counts)).sum()
    return add(unary_term, trans_term)


def crf_nll(crf, features, labels, l2_alpha=1e-4):
    """Negative conditional log-likelihood of a label sequence, plus L2 on
    the transition matrix: logZ - score(labels) + (alpha/2) * ||W||^2."""
    labels = np.asarray(labels, dtype=np.int64)
    unary = crf.unary_scores(features)
    tau = unary.shape[0]
    if labels.shape != (tau,):
        raise ValueError(f"labels must have length {tau}, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= crf.num_labels:
        raise ValueError(f"label index out of range [0, {crf.num_labels})")
    logz = _log_partition_from_unary(unary, crf.transition)
    score = _path_score(unary, crf.transition, labels)
    reg = scale(mul(crf.transition, crf.transition).sum(), l2_alpha / 2.0)
    return add(add(logz, scale(score, -1.0)), reg)


def viterbi_decode(crf, features):
    """Most probable label path; backtracking ties go to the smaller index."""
    unary = crf.unary_scores(features)
    path, score = _kernels.viterbi(unary.data, crf.transition.data)
    return path, score


def classify_sequence(crf, features):
    """Sequence label = mode of the Viterbi path (ties -> smaller index)."""
    path, _ = viterbi_decode(crf, features)
    counts = np.bincount(path, minlength=crf.num_labels)
    return int(counts.argmax())


def zero_one_cost(y_true, y_pred):
    """Mean per-frame disagreement between two label sequences."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    return float(np.mean(y_true != y_pred))


class RecognitionDecoder(Module):
    """Augment -> trunk -> CRF, as one unit over a feature-map batch."""

    def __init__(self, tau, n_joints, num_labels, rng):
        self.augment = FeatureAugment(tau, n_joints, rng)
        self.trunk = ClassifierTrunk(tau, n_joints, rng)
        self.crf = CrfModel(self.trunk.out_width, num_labels, rng)

    def features(self, feature_map):
        """feature_map: (tau, batch, N, 3) -> trunk features (tau, batch, N*16)."""
        return self.trunk(self.augment(feature_map))

    def nll(self, feature_map, labels, l2_alpha=1e-4):
        """Mean CRF negative log-likelihood over the batch.

        ``labels``: one integer per batch element; every frame of a sequence
        carries its sequence label.
        """
        feats = self.features(feature_map)
        tau, batch, width = feats.shape
        losses = []
        for b, label in enumerate(labels):
            seq_feats = _select_batch(feats, b)
            frame_labels = np.full(tau, int(label), dtype=np.int64)
            losses.append(crf_nll(self.crf, seq_feats, frame_labels, l2_alpha))
        total = losses[0]
        for term in losses[1:]:
            total = add(total, term)
        return scale(total, 1.0 / len(losses))

    def classify(self, feature_map):
        """Sequence-level labels for each batch element (inference)."""
        feats = self.features(feature_map)
        tau, batch, width = feats.shape
        return [classify_sequence(self.crf, _select_batch(feats, b)) for b in range(batch)]


def _select_batch(feats, b):
    """(tau, batch, F) -> (tau, F) for one batch index, differentiably."""
    tau, batch, width = feats.shape
    sel = np.zeros((batch, 1))
    sel[b, 0] = 1.0
    picked = matmul(transpose(feats, (0, 2, 1)), constant(sel))  # (tau, F, 1)
    return reshape(picked, (tau, width))
