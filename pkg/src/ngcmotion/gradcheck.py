"""Finite-difference verification of analytic gradients.

Every primitive op is checked against central differences of a weighted-sum
scalar head (a fixed seeded weighting, so ops whose plain sum is constant,
like the softmax, still exercise their full Jacobian).  A composite check
runs the entire model graph on a tiny configuration and probes a seeded
sample of coordinates of every parameter.

Relative error: |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
Failures are reported as entries, never raised, so one broken op cannot
mask the others.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tape,
    Tensor,
    backward,
    forward_primitive,
    mul,
    no_grad,
    reduce_sum,
    substream,
)

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4


@dataclass
class CheckEntry:
    name: str
    max_rel_err: float
    passed: bool
    note: str = ""

    def line(self):
        status = "pass" if self.passed else "FAIL"
        extra = f"  ({self.note})" if self.note else ""
        return f"{status}  {self.name:<28} max_rel_err={self.max_rel_err:.3e}{extra}"


def _rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def _away_from_zero(arr, margin=1e-2):
    """Push values out of the +-margin band around 0 (kink avoidance)."""
    out = arr.copy()
    small = np.abs(out) < margin
    out[small] = margin * np.where(out[small] >= 0, 1.0, -1.0) * 2.0
    return out


def _spread_ties(arr, axis, margin=1e-3):
    """Ensure comfortable gaps along a reduction axis (max-tie avoidance)."""
    idx = np.arange(arr.shape[axis]) * 3.0 * margin
    shape = [1] * arr.ndim
    shape[axis] = arr.shape[axis]
    return arr + idx.reshape(shape)


def _op_cases(rng):
    """(name, op_kind, inputs, kwargs) tuples, inputs seeded in [-2, 2]."""
    u = lambda *shape: rng.uniform(-2.0, 2.0, size=shape)
    cases = [
        ("matmul", "matmul", [u(3, 4), u(4, 2)], {}),
        ("matmul/batched", "matmul", [u(2, 3, 4), u(4, 5)], {}),
        ("add", "add", [u(3, 4), u(3, 4)], {}),
        ("add/broadcast", "add", [u(3, 4), u(4)], {}),
        ("sub", "sub", [u(3, 4), u(3, 4)], {}),
        ("elementwise-mul", "elementwise-mul", [u(3, 4), u(3, 4)], {}),
        ("scalar-mul", "scalar-mul", [u(3, 4)], {"c": -1.7}),
        ("relu", "relu", [_away_from_zero(u(4, 5))], {}),
        ("sigmoid", "sigmoid", [u(4, 5)], {}),
        ("tanh", "tanh", [u(4, 5)], {}),
        ("softmax-lastdim", "softmax-lastdim", [u(4, 5)], {}),
        ("exp", "exp", [u(4, 5)], {}),
        ("log", "log", [rng.uniform(0.2, 2.0, size=(4, 5))], {}),
        ("sum", "sum", [u(3, 4)], {}),
        ("sum/axis", "sum", [u(3, 4, 2)], {"axis": 1}),
        ("mean", "mean", [u(3, 4)], {}),
        ("mean/axis", "mean", [u(3, 4, 2)], {"axis": (0, 2)}),
        ("max-reduce", "max-reduce", [_spread_ties(u(4, 5), axis=1)], {"axis": 1}),
        ("max-reduce/all", "max-reduce", [_spread_ties(u(3, 4), axis=0)], {}),
        ("concat", "concat", [u(2, 3), u(4, 3)], {"axis": 0}),
        ("reshape", "reshape", [u(3, 4)], {"shape": (2, 6)}),
        ("transpose", "transpose", [u(2, 3, 4)], {"axes": (1, 0, 2)}),
        ("batchnorm", "batchnorm", [u(16, 8), rng.uniform(0.5, 1.5, 8), u(8)], {}),
        ("power", "power", [rng.uniform(0.5, 2.0, size=(3, 4))], {"p": 1.7}),
        ("power/square", "power", [u(3, 4)], {"p": 2.0}),
    ]
    return cases


def check_op(name, op_kind, arrays, kwargs, rng, h=DEFAULT_STEP, tol=DEFAULT_TOL):
    """Check one op against central differences; returns a CheckEntry."""

    def run(inputs_data):
        tensors = [Tensor(a, requires_grad=True) for a in inputs_data]
        out = forward_primitive(op_kind, tensors, **kwargs)
        return tensors, out

    try:
        with Tape():
            tensors, out = run(arrays)
            weights = rng.uniform(-1.0, 1.0, size=out.shape)
            loss = reduce_sum(mul(out, Tensor(weights)))
            backward(loss)
            analytic = [t.grad.copy() for t in tensors]

        def scalar(inputs_data):
            with no_grad():
                _, o = run(inputs_data)
                return float(np.sum(o.data * weights))

        max_err = 0.0
        for i, base in enumerate(arrays):
            base = np.asarray(base, dtype=np.float64)
            flat = base.reshape(-1)
            for j in range(flat.size):
                plus = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
                minus = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
                plus[i].reshape(-1)[j] += h
                minus[i].reshape(-1)[j] -= h
                numeric = (scalar(plus) - scalar(minus)) / (2.0 * h)
                err = _rel_err(float(analytic[i].reshape(-1)[j]), numeric)
                max_err = max(max_err, err)
        return CheckEntry(name, max_err, max_err < tol)
    except Exception as e:  # report, don't abort the sweep
        return CheckEntry(name, float("inf"), False, note=f"{type(e).__name__}: {e}")


def check_all_ops(seed=0, h=DEFAULT_STEP, tol=DEFAULT_TOL):
    rng = substream(seed, "gradcheck")
    entries = []
    for name, op_kind, arrays, kwargs in _op_cases(rng):
        entries.append(check_op(name, op_kind, arrays, kwargs, rng, h, tol))
    return entries


# ---------------------------------------------------------------------------
# composite end-to-end check


def _tiny_setup(seed, tau=4, n_joints=5, num_labels=2, batch=2, horizon=3):
    from .data import generate_synthetic, training_windows
    from .model import build_model
    from .training import make_model_config

    ds = generate_synthetic(
        classes=num_labels,
        per_class=batch // num_labels + 1,
        n_joints=n_joints,
        frames=tau + horizon,
        fps=25.0,
        seed=seed,
    )
    x, y, l = training_windows(ds, tau, horizon)
    x, y, l = x[:batch], y[:batch], l[:batch]
    cfg = make_model_config(ds, tau, horizon)
    model = build_model(cfg, seed)
    return model, x.transpose(1, 0, 2, 3), y.transpose(1, 0, 2, 3), l


def check_composite(seed=0, h=DEFAULT_STEP, tol=DEFAULT_TOL, max_coords=8,
                    lam=0.4):
    """Probe the full encoder->attention->both-losses graph.

    For every parameter tensor, up to ``max_coords`` seeded coordinates are
    perturbed and the combined-loss analytic gradient compared against
    central differences.  Teacher forcing is pinned at p=1 so the graph is
    identical across evaluations.
    """
    model, x, y, labels = _tiny_setup(seed)
    rng = substream(seed, "gradcheck-composite")

    def loss_value():
        with no_grad():
            loss, _, _ = model.training_losses(
                x, y, labels, lam=lam, teacher_prob=1.0
            )
            return loss.item()

    with Tape():
        loss, _, _ = model.training_losses(x, y, labels, lam=lam, teacher_prob=1.0)
        backward(loss)

    entries = []
    for name, p in sorted(model.named_parameters(), key=lambda kv: kv[0]):
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        count = min(max_coords, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        max_err = 0.0
        for j in coords:
            keep = flat[j]
            flat[j] = keep + h
            up = loss_value()
            flat[j] = keep - h
            down = loss_value()
            flat[j] = keep
            numeric = (up - down) / (2.0 * h)
            max_err = max(max_err, _rel_err(float(gflat[j]), numeric))
        entries.append(CheckEntry(f"composite/{name}", max_err, max_err < tol))
    return entries


def run_gradcheck(seed=0, h=DEFAULT_STEP, tol=DEFAULT_TOL, include_composite=True):
    """Full sweep; returns (entries, elapsed seconds)."""
    start = time.monotonic()
    entries = check_all_ops(seed, h, tol)
    if include_composite:
        entries.extend(check_composite(seed, h, tol))
    return entries, time.monotonic() - start
