"""Autoregressive displacement decoder for future poses.

An LSTM cell consumes per-step joint displacements and a fully connected
head maps its hidden state back to an (N, 3) displacement that is added to
the previous pose (running sum).  The initial hidden and cell states are
learned linear maps of the time-averaged attention feature map; the first
input displacement is the difference between the feature map's last two
frames.

During training, scheduled sampling flips one seeded coin per time step:
with probability p the ground-truth displacement is fed instead of the
model's own.  p starts at 1 and decays by a fixed factor per epoch.
"""

from __future__ import annotations

from dataclasses import dataclass

from .layers import Linear, LstmCell, Module, select_frame, stack_frames
from .tensor import Tensor, add, reduce_mean, reshape, sub

HIDDEN_PER_JOINT = 8


@dataclass
class TeacherForcingSchedule:
    """Per-epoch probability of feeding ground truth: p(e) = decay**e."""

    p0: float = 1.0
    decay: float = 0.995

    def probability(self, epoch):
        if epoch < 0:
            raise ValueError("epoch must be >= 0")
        return self.p0 * self.decay ** epoch


@dataclass
class DecoderState:
    hidden: Tensor  # (batch, N*8)
    cell: Tensor  # (batch, N*8)
    last_pose: Tensor  # (batch, N, 3)
    last_disp: Tensor  # (batch, N, 3) displacement most recently produced/fed
    step: int = 0


class MotionDecoder(Module):
    def __init__(self, n_joints, rng):
        self.n_joints = n_joints
        width = n_joints * 3
        hidden = n_joints * HIDDEN_PER_JOINT
        self.init_hidden = Linear(width, hidden, rng)
        self.init_cell = Linear(width, hidden, rng)
        self.cell = LstmCell(width, hidden, rng)
        self.head = Linear(hidden, width, rng)

    def init_state(self, feature_map, x_last):
        """feature_map: (tau, batch, N, 3); x_last: (batch, N, 3) observed pose."""
        tau, batch = feature_map.shape[0], feature_map.shape[1]
        flat = reshape(feature_map, (tau, batch, self.n_joints * 3))
        context = reduce_mean(flat, axis=0)  # (batch, N*3)
        h = self.init_hidden(context)
        c = self.init_cell(context)
        if not isinstance(x_last, Tensor):
            x_last = Tensor(x_last)
        last = select_frame(flat, tau - 1)
        prev = select_frame(flat, tau - 2)
        first_disp = reshape(sub(last, prev), (batch, self.n_joints, 3))
        return DecoderState(hidden=h, cell=c, last_pose=x_last, last_disp=first_disp)

    def step(self, state, disp):
        """One decode step from an input displacement; returns (pose, new state)."""
        batch = disp.shape[0]
        flat = reshape(disp, (batch, self.n_joints * 3))
        h, c = self.cell(flat, state.hidden, state.cell)
        delta = reshape(self.head(h), (batch, self.n_joints, 3))
        pose = add(state.last_pose, delta)
        return pose, DecoderState(
            hidden=h, cell=c, last_pose=pose, last_disp=delta, step=state.step + 1
        )

    def predict(self, feature_map, x_last, horizon, *, state=None,
                teacher_prob=0.0, ground_truth=None, coin_rng=None):
        """Roll the decoder out ``horizon`` steps.

        Inference: feed the model's own previous displacement.  Training
        (``teacher_prob`` > 0 with ``ground_truth`` (horizon, batch, N, 3)):
        each step >= 2 flips one coin for the whole batch; on success the
        ground-truth displacement (difference of consecutive true frames,
        seeded with the last observed pose) is fed instead.  Pose
        integration always accumulates the model's own outputs.

        Returns (poses (horizon, batch, N, 3), final state).  Pass ``state``
        to continue a previous rollout instead of starting from the feature
        map.
        """
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        if teacher_prob > 0.0 and ground_truth is None:
            raise ValueError("teacher forcing requires ground_truth")
        if teacher_prob > 0.0 and teacher_prob < 1.0 and coin_rng is None:
            raise ValueError("teacher forcing with 0 < p < 1 requires coin_rng")
        if state is None:
            state = self.init_state(feature_map, x_last)

        gt_frames = None
        if ground_truth is not None:
            gt = ground_truth if isinstance(ground_truth, Tensor) else Tensor(ground_truth)
            gt_frames = [select_frame(gt, t).detach() for t in range(gt.shape[0])]

        poses = []
        for t in range(horizon):
            pose, state = self.step(state, state.last_disp)
            poses.append(pose)
            if t + 1 < horizon and teacher_prob > 0.0:
                if teacher_prob >= 1.0:
                    use_gt = True
                else:
                    use_gt = coin_rng.random() < teacher_prob
                if use_gt:
                    prev = gt_frames[t - 1] if t > 0 else (
                        x_last if isinstance(x_last, Tensor) else Tensor(x_last)
                    )
                    gt_disp = sub(gt_frames[t], prev)
                    state = DecoderState(
                        hidden=state.hidden,
                        cell=state.cell,
                        last_pose=state.last_pose,
                        last_disp=gt_disp,
                        step=state.step,
                    )
        return stack_frames(poses), state
