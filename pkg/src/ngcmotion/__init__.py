"""Joint skeleton-based motion prediction and action recognition.

A self-contained numpy engine: reverse-mode autodiff core, graph
convolutions over the skeleton, a bidirectional-LSTM encoder with a
non-local attention feature extractor, an autoregressive displacement
decoder and a chain-CRF recognition head, plus the synthetic data pipeline,
training loop and CLI needed to exercise the whole thing at desk scale.
"""

from .tensor import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    backward,
    forward_primitive,
    no_grad,
    substream,
)
from .graph import NormalizedAdjacency, SkeletonTopology, default_topology, normalize
from .data import Dataset, PoseSequence, generate_synthetic, load_dataset, save_dataset
from .model import JointModel, ModelConfig, build_model
from .training import TrainConfig, evaluate, lr_at_epoch, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "forward_primitive",
    "no_grad",
    "substream",
    "NormalizedAdjacency",
    "SkeletonTopology",
    "default_topology",
    "normalize",
    "Dataset",
    "PoseSequence",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
    "JointModel",
    "ModelConfig",
    "build_model",
    "TrainConfig",
    "evaluate",
    "lr_at_epoch",
    "train",
]
