"""Training loop: batching, schedules, metrics, checkpointing, evaluation.

Every source of randomness is a named substream of the master seed, and the
shuffle/coin streams are re-derived per epoch from (seed, purpose, epoch).
Resuming from a checkpoint therefore replays exactly the run that an
uninterrupted training would have produced, bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint as ckpt
from .data import (
    accuracy,
    confusion_matrix,
    split_dataset,
    training_windows,
    zerov_baseline,
)
from .model import JointModel, ModelConfig, build_model
from .motion_decoder import TeacherForcingSchedule
from .tensor import AdamState, Tape, adam_step, backward, substream

METRICS_HEADER = "epoch,loss_pred,loss_rec,loss,val_mae,val_accuracy"


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lam: float = 0.4
    huber_beta: float = 1.0
    penalty_weight: float = 0.1
    lr: float = 1e-3
    lr_decay: float = 0.1
    lr_decay_every: int = 10
    batch_size: int = 16
    epochs: int = 100
    tf_decay: float = 0.995
    crf_alpha: float = 1e-4
    seed: int = 0
    val_fraction: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        for name in ("huber_beta", "lr", "tf_decay"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("penalty_weight", "crf_alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def lr_at_epoch(cfg, epoch):
    """Step schedule: lr * decay ** floor(epoch / every)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if cfg.lr_decay_every <= 0:
        return cfg.lr
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


def make_model_config(dataset, tau, horizon, graph_mode="skeleton",
                      shared_qk=False, variant="full"):
    return ModelConfig(
        n_joints=dataset.topology.n_joints,
        tau=tau,
        horizon=horizon,
        labels=dataset.label_set,
        edges=dataset.topology.edges,
        graph_mode=graph_mode,
        shared_qk=shared_qk,
        variant=variant,
    )


@dataclass
class EvalReport:
    horizons: list
    horizon_ms: list
    model_mae: list
    zerov_mae: list
    overall_mae: float
    acc: float
    confusion: np.ndarray
    labels: tuple


def evaluate(model, dataset, horizons=None):
    """Inference-mode metrics for every sequence of a dataset."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    cfgm = model.config
    horizons = list(horizons) if horizons else list(range(1, cfgm.horizon + 1))
    for h in horizons:
        if not 1 <= h <= cfgm.horizon:
            raise ValueError(f"horizon {h} outside the model's range [1, {cfgm.horizon}]")
    x_prev, x_fut, labels = training_windows(dataset, cfgm.tau, cfgm.horizon)
    pred = model.predict_future(x_prev.transpose(1, 0, 2, 3), cfgm.horizon)
    pred = pred.transpose(1, 0, 2, 3)  # (S, horizon, N, 3)
    zerov = np.stack([zerov_baseline(x, cfgm.horizon) for x in x_prev])
    model_mae = [float(np.mean(np.abs(pred[:, h - 1] - x_fut[:, h - 1]))) for h in horizons]
    zerov_mae = [float(np.mean(np.abs(zerov[:, h - 1] - x_fut[:, h - 1]))) for h in horizons]
    overall = float(np.mean(np.abs(pred - x_fut)))
    guesses = model.classify(x_prev.transpose(1, 0, 2, 3))
    acc = accuracy(guesses, labels.tolist())
    conf = confusion_matrix(guesses, labels.tolist(), cfgm.num_labels)
    ms = [int(round(1000.0 * h / dataset.fps)) for h in horizons]
    return EvalReport(
        horizons=horizons,
        horizon_ms=ms,
        model_mae=model_mae,
        zerov_mae=zerov_mae,
        overall_mae=overall,
        acc=acc,
        confusion=conf,
        labels=cfgm.labels,
    )


@dataclass
class TrainResult:
    model: JointModel
    adam: AdamState
    metrics: list  # one dict per epoch
    best_epoch: int
    best_val_loss: float
    final_report: EvalReport


def _metrics_row(m):
    return ",".join(
        [
            str(m["epoch"]),
            repr(m["loss_pred"]),
            repr(m["loss_rec"]),
            repr(m["loss"]),
            repr(m["val_mae"]),
            repr(m["val_accuracy"]),
        ]
    )


def write_metrics(path, metrics):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        for m in metrics:
            fh.write(_metrics_row(m) + "\n")


def _validation_loss(model, x_prev, x_fut, labels, cfg):
    """Combined loss in inference conditions (eval batchnorm, no forcing)."""
    from .losses import combined_loss, prediction_loss
    from .tensor import Tensor, no_grad

    with no_grad():
        x_prev_t = Tensor(x_prev)
        fmap = model.feature_map(x_prev_t, training=False)
        from .model import _last_frame

        pred, _ = model.decoder.predict(fmap, _last_frame(x_prev_t), x_fut.shape[0])
        lp = prediction_loss(x_fut, pred, cfg.huber_beta, cfg.penalty_weight)
        lr_ = model.recognizer.nll(fmap, labels, cfg.crf_alpha)
        return (
            float(combined_loss(lp, lr_, cfg.lam).item()),
            float(lp.item()),
            float(lr_.item()),
        )


def train(dataset, cfg=None, model_cfg=None, *, out_path=None, metrics_path=None,
          resume=None, grad_hook=None, quiet=True):
    """Run the full training protocol; returns a TrainResult.

    ``out_path`` receives the final (resumable) checkpoint; the best
    validation checkpoint goes to ``out_path + ".best"``.  ``resume`` is a
    previously written final checkpoint; the model configuration always
    comes from it, and the train configuration does too unless ``cfg`` is
    passed (e.g. with a larger epoch count — seed-feeding fields must stay
    unchanged for the continuation to replay exactly).
    ``grad_hook(model, epoch, step)``, when given, runs after each backward
    pass and before the optimizer step.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")

    start_epoch = 0
    loaded = None
    if resume is not None:
        loaded = ckpt.read_checkpoint(resume)
        model_cfg = ModelConfig.from_dict(loaded.config["model"])
        if cfg is None:
            cfg = TrainConfig.from_dict(loaded.config["train"])
        start_epoch = loaded.epoch
    if cfg is None:
        raise ValueError("cfg is required unless resuming")
    if model_cfg is None:
        raise ValueError("model_cfg is required unless resuming")

    train_set, val_set = split_dataset(dataset, cfg.val_fraction, cfg.seed)
    x_all, y_all, l_all = training_windows(train_set, model_cfg.tau, model_cfg.horizon)
    xv, yv, lv = training_windows(val_set, model_cfg.tau, model_cfg.horizon)
    xv_t = xv.transpose(1, 0, 2, 3)
    yv_t = yv.transpose(1, 0, 2, 3)

    model = build_model(model_cfg, cfg.seed)
    adam = AdamState(lr=cfg.lr)
    best_val = math.inf
    best_epoch = -1
    best_records = None
    if loaded is not None:
        ckpt.restore_model(model, loaded)
        ckpt.restore_adam(adam, loaded)
        adam.step = int(loaded.config.get("adam_step", 0))
        stored_best = loaded.config.get("best_val_loss")
        best_val = math.inf if stored_best is None else float(stored_best)
        best_epoch = int(loaded.config.get("best_epoch", -1))

    schedule = TeacherForcingSchedule(decay=cfg.tf_decay)
    params = [p for _, p in sorted(model.named_parameters(), key=lambda kv: kv[0])]
    metrics = []
    n_train = x_all.shape[0]

    def snapshot():
        return {k: v.copy() for k, v in ckpt.model_records(model, adam).items()}

    last_good = snapshot()
    last_good_meta = (start_epoch, adam.step)

    def config_dict(epoch_done, adam_steps):
        return {
            "model": model_cfg.to_dict(),
            "train": cfg.to_dict(),
            "epoch": epoch_done,
            "adam_step": adam_steps,
            "best_val_loss": None if best_val == math.inf else best_val,
            "best_epoch": best_epoch,
        }

    def bail(epoch, step, value):
        if out_path is not None:
            ckpt.write_checkpoint(out_path, config_dict(*last_good_meta), last_good)
        raise TrainingDivergedError(
            f"non-finite loss ({value}) at epoch {epoch + 1}, step {step + 1}; "
            f"last good state was retained"
        )

    for epoch in range(start_epoch, cfg.epochs):
        adam.lr = lr_at_epoch(cfg, epoch)
        p_teacher = schedule.probability(epoch)
        order = np.arange(n_train)
        substream(cfg.seed, f"shuffle:{epoch}").shuffle(order)
        coin_rng = substream(cfg.seed, f"coins:{epoch}")
        sum_pred = sum_rec = sum_comb = 0.0
        n_batches = 0
        for step, lo in enumerate(range(0, n_train, cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            xb = x_all[idx].transpose(1, 0, 2, 3)
            yb = y_all[idx].transpose(1, 0, 2, 3)
            lb = l_all[idx]
            with Tape():
                loss, loss_pred, loss_rec = model.training_losses(
                    xb,
                    yb,
                    lb,
                    lam=cfg.lam,
                    huber_beta=cfg.huber_beta,
                    penalty_weight=cfg.penalty_weight,
                    crf_alpha=cfg.crf_alpha,
                    teacher_prob=p_teacher,
                    coin_rng=coin_rng,
                )
                value = loss.item()
                if not math.isfinite(value):
                    bail(epoch, step, value)
                backward(loss)
                if grad_hook is not None:
                    grad_hook(model, epoch, step)
                adam_step(params, adam)
            sum_pred += loss_pred.item()
            sum_rec += loss_rec.item()
            sum_comb += value
            n_batches += 1

        val_loss, _, _ = _validation_loss(model, xv_t, yv_t, lv, cfg)
        report = evaluate(model, val_set)
        row = {
            "epoch": epoch + 1,
            "loss_pred": sum_pred / n_batches,
            "loss_rec": sum_rec / n_batches,
            "loss": sum_comb / n_batches,
            "val_mae": report.overall_mae,
            "val_accuracy": report.acc,
            "val_loss": val_loss,
        }
        metrics.append(row)
        if not quiet:
            print(
                f"epoch {epoch + 1}: loss={row['loss']:.6f} "
                f"val_mae={row['val_mae']:.6f} val_acc={row['val_accuracy']:.4f}"
            )
        last_good = snapshot()
        last_good_meta = (epoch + 1, adam.step)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch + 1
            best_records = last_good
            best_meta = last_good_meta

    final_epoch = max(cfg.epochs, start_epoch)
    if out_path is not None:
        ckpt.write_checkpoint(out_path, config_dict(final_epoch, adam.step), last_good)
        if best_records is not None:
            ckpt.write_checkpoint(
                str(out_path) + ".best", config_dict(*best_meta), best_records
            )
    if metrics_path is not None:
        _write_or_append_metrics(metrics_path, metrics, start_epoch)

    final_report = evaluate(model, val_set)
    return TrainResult(
        model=model,
        adam=adam,
        metrics=metrics,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        final_report=final_report,
    )


def _write_or_append_metrics(path, metrics, start_epoch):
    import os

    mode = "a" if start_epoch > 0 and os.path.exists(path) else "w"
    with open(path, mode, encoding="utf-8") as fh:
        if mode == "w":
            fh.write(METRICS_HEADER + "\n")
        for m in metrics:
            fh.write(_metrics_row(m) + "\n")


def load_model(path):
    """Rebuild a model (and its config) from a checkpoint file."""
    loaded = ckpt.read_checkpoint(path)
    model_cfg = ModelConfig.from_dict(loaded.config["model"])
    train_cfg = TrainConfig.from_dict(loaded.config.get("train", {}))
    model = build_model(model_cfg, train_cfg.seed)
    ckpt.restore_model(model, loaded)
    return model, loaded
