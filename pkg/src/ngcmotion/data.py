"""Dataset container, the SKEL1 file format, the synthetic motion generator
and the evaluation metrics.

SKEL1 is line-delimited JSON.  Line 1 is the header::

    {"format": "SKEL1", "n_joints": N, "fps": F,
     "labels": ["..."], "edges": [[i, j], ...]}

and every following line is one sequence::

    {"label": "name-or-null", "frames": [[[x, y, z] * N] * T]}

Floats are written with Python's shortest round-trip representation, so a
save/load cycle reproduces the coordinates exactly.

MAE here is the mean absolute per-coordinate error at fixed prediction
horizons, measured in the model's native coordinate space (the synthetic
skeletons are roughly unit scale).  Horizon indices are 1-based frame
offsets into the predicted future; at 25 fps frames 2/4/8/10 correspond to
80/160/320/400 ms.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import SkeletonTopology, default_topology, rest_pose
from .tensor import substream

FORMAT_NAME = "SKEL1"


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the 1-based line number."""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class PoseSequence:
    frames: np.ndarray  # (T, N, 3)
    fps: float
    label: str = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise ValueError(f"frames must be (T, N, 3), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames contain non-finite coordinates")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def n_joints(self):
        return self.frames.shape[1]

    def window(self, tau, horizon):
        """(observed, future) split; requires n_frames >= tau + horizon."""
        if self.n_frames < tau + horizon:
            raise ValueError(
                f"sequence has {self.n_frames} frames, need tau+horizon={tau + horizon}"
            )
        return self.frames[:tau], self.frames[tau : tau + horizon]


@dataclass
class Dataset:
    topology: SkeletonTopology
    sequences: list
    label_set: tuple
    fps: float

    def __post_init__(self):
        self.label_set = tuple(self.label_set)
        for i, seq in enumerate(self.sequences):
            if seq.n_joints != self.topology.n_joints:
                raise ValueError(
                    f"sequence {i} has {seq.n_joints} joints, topology has {self.topology.n_joints}"
                )
            if seq.label is not None and seq.label not in self.label_set:
                raise ValueError(f"sequence {i} label {seq.label!r} not in label set")

    def __len__(self):
        return len(self.sequences)

    def label_index(self, label):
        return self.label_set.index(label)


# ---------------------------------------------------------------------------
# synthetic generator


def generate_synthetic(classes, per_class, n_joints, frames, fps, seed,
                       amplitude=0.3, noise_sigma=0.01):
    """Deterministic multi-class sinusoidal motion dataset.

    Class k oscillates at 0.5 * (k + 1) Hz.  Every sequence draws its own
    per-joint phases, so samples of one class share a frequency but not a
    phase; a small Gaussian jitter (sigma 0.01) is added per sample.  All
    randomness comes from the "data" substream of ``seed``.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if per_class < 1:
        raise ValueError(f"need at least 1 sample per class, got {per_class}")
    if frames < 2:
        raise ValueError(f"need at least 2 frames, got {frames}")
    topo = default_topology(n_joints)
    rest = rest_pose(topo)
    rng = substream(seed, "data")
    t = np.arange(frames, dtype=np.float64) / fps
    labels = tuple(f"act{k:02d}" for k in range(classes))
    sequences = []
    for k in range(classes):
        freq = 0.5 * (k + 1)
        for _ in range(per_class):
            phases = rng.uniform(0.0, 2.0 * math.pi, size=n_joints)
            wave = amplitude * np.sin(
                2.0 * math.pi * freq * t[:, None] + phases[None, :]
            )  # (T, N)
            coords = rest[None, :, :] + wave[:, :, None]
            coords = coords + rng.normal(0.0, noise_sigma, size=coords.shape)
            sequences.append(PoseSequence(coords, fps=fps, label=labels[k]))
    return Dataset(topology=topo, sequences=sequences, label_set=labels, fps=fps)


def split_dataset(dataset, val_fraction, seed):
    """Deterministic shuffle split into (train, validation) datasets.

    ``val_fraction == 0`` returns the full dataset for both halves, so
    validation metrics are then training-set metrics.
    """
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")
    if val_fraction == 0.0:
        return dataset, dataset
    idx = np.arange(len(dataset))
    substream(seed, "split").shuffle(idx)
    n_val = max(1, int(round(val_fraction * len(dataset))))
    if n_val >= len(dataset):
        raise ValueError("validation split would consume the whole dataset")
    val_idx = sorted(idx[:n_val].tolist())
    train_idx = sorted(idx[n_val:].tolist())

    def take(ids):
        return Dataset(
            topology=dataset.topology,
            sequences=[dataset.sequences[i] for i in ids],
            label_set=dataset.label_set,
            fps=dataset.fps,
        )

    return take(train_idx), take(val_idx)


def dataset_fingerprint(dataset):
    """Stable content hash (used by determinism checks)."""
    h = hashlib.sha256()
    for seq in dataset.sequences:
        h.update((seq.label or "").encode())
        h.update(np.ascontiguousarray(seq.frames).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# metrics


def mae(pred, truth, horizons):
    """Mean absolute per-coordinate error at each 1-based horizon frame.

    ``pred`` and ``truth`` are (H, N, 3) arrays or PoseSequences of equal
    shape; ``horizons`` are frame offsets into them.
    """
    p = pred.frames if isinstance(pred, PoseSequence) else np.asarray(pred)
    t = truth.frames if isinstance(truth, PoseSequence) else np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError(f"mae: shapes differ, {p.shape} vs {t.shape}")
    out = []
    for h in horizons:
        if not 1 <= h <= p.shape[0]:
            raise ValueError(f"horizon {h} out of range [1, {p.shape[0]}]")
        out.append(float(np.mean(np.abs(p[h - 1] - t[h - 1]))))
    return out


def horizon_milliseconds(horizons, fps):
    return [int(round(1000.0 * h / fps)) for h in horizons]


def zerov_baseline(x_prev, horizon):
    """Zero-velocity prediction: repeat the last observed frame ``horizon`` times."""
    x_prev = np.asarray(x_prev)
    if x_prev.ndim != 3 or x_prev.shape[0] < 1:
        raise ValueError(f"x_prev must be (tau, N, 3) with tau >= 1, got {x_prev.shape}")
    return np.repeat(x_prev[-1:], horizon, axis=0)


def accuracy(preds, truths):
    """Fraction of exact label matches."""
    preds = list(preds)
    truths = list(truths)
    if len(preds) != len(truths):
        raise ValueError(f"length mismatch: {len(preds)} vs {len(truths)}")
    if not preds:
        raise ValueError("empty prediction list")
    return sum(p == t for p, t in zip(preds, truths)) / len(preds)


def confusion_matrix(preds, truths, num_labels):
    m = np.zeros((num_labels, num_labels), dtype=np.int64)
    for p, t in zip(preds, truths):
        m[t, p] += 1
    return m


def format_confusion(matrix, labels):
    width = max(len(l) for l in labels) + 2
    lines = [" " * width + "".join(f"{l:>{width}}" for l in labels) + "   (pred)"]
    for i, l in enumerate(labels):
        row = "".join(f"{int(v):>{width}}" for v in matrix[i])
        lines.append(f"{l:>{width}}" + row)
    lines.append("(true)")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# SKEL1 serialization


def save_dataset(path, dataset):
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format": FORMAT_NAME,
            "n_joints": dataset.topology.n_joints,
            "fps": dataset.fps,
            "labels": list(dataset.label_set),
            "edges": [list(e) for e in dataset.topology.edges],
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for seq in dataset.sequences:
            record = {"label": seq.label, "frames": seq.frames.tolist()}
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_dataset(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(1, "empty file, expected SKEL1 header")
    header = _parse_json(lines[0], 1)
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise DatasetFormatError(1, f"not a {FORMAT_NAME} header")
    try:
        n_joints = int(header["n_joints"])
        fps = float(header["fps"])
        labels = tuple(str(l) for l in header["labels"])
        edges = tuple((int(i), int(j)) for i, j in header["edges"])
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetFormatError(1, f"bad header field: {e}") from None
    try:
        topo = SkeletonTopology(n_joints, edges)
    except ValueError as e:
        raise DatasetFormatError(1, str(e)) from None

    sequences = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = _parse_json(line, line_no)
        if not isinstance(rec, dict) or "frames" not in rec:
            raise DatasetFormatError(line_no, "sequence record must contain 'frames'")
        label = rec.get("label")
        if label is not None:
            label = str(label)
            if label not in labels:
                raise DatasetFormatError(
                    line_no, f"unknown label {label!r}, header declares {list(labels)}"
                )
        frames = np.asarray(rec["frames"], dtype=np.float64)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise DatasetFormatError(
                line_no, f"frames must be (T, N, 3), got shape {frames.shape}"
            )
        if frames.shape[1] != n_joints:
            raise DatasetFormatError(
                line_no,
                f"sequence {line_no - 2} has {frames.shape[1]} joints, header says {n_joints}",
            )
        if not np.all(np.isfinite(frames)):
            raise DatasetFormatError(line_no, "non-finite coordinate in frames")
        sequences.append(PoseSequence(frames, fps=fps, label=label))
    return Dataset(topology=topo, sequences=sequences, label_set=labels, fps=fps)


def _parse_json(line, line_no):
    try:
        return json.loads(line)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(line_no, f"invalid JSON: {e.msg}") from None


# ---------------------------------------------------------------------------
# batching helpers


def training_windows(dataset, tau, horizon):
    """Arrays (x_prev (S, tau, N, 3), x_fut (S, horizon, N, 3), labels (S,))."""
    xs, ys, ls = [], [], []
    for seq in dataset.sequences:
        prev, fut = seq.window(tau, horizon)
        xs.append(prev)
        ys.append(fut)
        if seq.label is None:
            raise ValueError("training requires labelled sequences")
        ls.append(dataset.label_index(seq.label))
    return np.stack(xs), np.stack(ys), np.asarray(ls, dtype=np.int64)
