"""Full-batch gradient descent: the main trajectory and its leave-out siblings.

Continuous time is mapped to steps by ``t = k * lr``.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import net
from .errors import DivergenceError, InputError

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e3


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    steps: int
    stride: int = 1
    seed: int = 0
    init: str = "standard"  # or "zero-output"

    def __post_init__(self):
        if not self.lr > 0:
            raise InputError(f"learning rate must be positive, got {self.lr}")
        if self.steps < 1:
            raise InputError("need at least one step")
        if self.stride < 1 or self.steps % self.stride:
            raise InputError(f"stride {self.stride} must divide steps {self.steps}")
        if self.init not in ("standard", "zero-output"):
            raise InputError(f"unknown init option {self.init!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrajectoryRecord:
    steps: np.ndarray        # recorded step indices
    lr: float
    weights: np.ndarray      # (K, P)
    train_loss: np.ndarray   # (K,)
    residual: np.ndarray = None   # (K, n*C), scaled by 1/sqrt(n); full run only
    batch: int = -1          # leave-out batch index, -1 for the full run

    @property
    def times(self):
        return self.steps * self.lr

    @property
    def final_weights(self):
        return self.weights[-1]

    def __len__(self):
        return len(self.steps)


def initial_weights(spec, cfg):
    return net.init_weights(spec, zero_output=(cfg.init == "zero-output"))


def stacked_residual(spec, w, S):
    """Residual vector r_n = [r_1, ..., r_n] / sqrt(n), flattened sample-major."""
    _, r = net.loss_and_residual(spec, w, S.inputs, S.targets)
    return r.reshape(-1) / np.sqrt(S.n)


def split_arrays(S, idx):
    """``(X_batch, Y_batch, X_rest, Y_rest)`` for an index batch."""
    mask = np.zeros(S.n, dtype=bool)
    mask[np.asarray(idx, dtype=np.int64)] = True
    return S.inputs[mask], S.targets[mask], S.inputs[~mask], S.targets[~mask]


def _check_dims(spec, S):
    if spec.input_dim != S.input_dim or spec.output_dim != S.output_dim:
        raise InputError(
            f"network {spec.widths} does not match dataset dims "
            f"({S.input_dim} -> {S.output_dim})")


def _descend(spec, X, Y, w0, lr, n_steps, stride, record_residual, step0=0):
    n = X.shape[0]
    steps, weights, losses, residuals = [], [], [], []
    w = np.array(w0, dtype=np.float64, copy=True)
    limit = None
    for k in range(n_steps + 1):
        loss, g = net.train_loss_and_grad(spec, w, X, Y)
        if limit is None:
            limit = DIVERGENCE_FACTOR * max(loss, 1.0)
        if not np.isfinite(loss) or loss > limit or not np.all(np.isfinite(g)):
            raise DivergenceError(f"training diverged at step {step0 + k} (loss {loss:.3g})",
                                  step=step0 + k)
        if k % stride == 0:
            steps.append(step0 + k)
            weights.append(w.copy())
            losses.append(loss)
            if record_residual:
                _, r = net.loss_and_residual(spec, w, X, Y)
                residuals.append(r.reshape(-1) / np.sqrt(n))
        if k < n_steps:
            w -= lr * g
    res = np.array(residuals) if record_residual else None
    return np.array(steps), np.array(weights), np.array(losses), res


def train_full(spec, S, cfg, w0=None):
    """Gradient descent on the whole dataset, ``w <- w - lr * grad mean loss``."""
    _check_dims(spec, S)
    if w0 is None:
        w0 = initial_weights(spec, cfg)
    steps, weights, losses, res = _descend(
        spec, S.inputs, S.targets, w0, cfg.lr, cfg.steps, cfg.stride, True)
    return TrajectoryRecord(steps, cfg.lr, weights, losses, res, -1)


def _leave_out_job(args):
    spec, X, Y, w0, lr, n_steps, stride, step0, b = args
    steps, weights, losses, _ = _descend(spec, X, Y, w0, lr, n_steps, stride, False, step0)
    return TrajectoryRecord(steps, lr, weights, losses, None, b)


def train_leave_out(spec, S, plan, cfg, from_record=None, full=None, jobs=1):
    """One trajectory per batch of ``plan``, trained on ``S`` minus that batch.

    All runs share the full run's initialization, or, with ``from_record=k``,
    start from the full run's weights at its ``k``-th record point.
    """
    _check_dims(spec, S)
    plan.validate(S.n)
    if from_record is None or from_record == 0:
        w0 = initial_weights(spec, cfg) if full is None else full.weights[0]
        step0 = 0 if full is None else int(full.steps[0])
    else:
        if full is None:
            raise InputError("a checkpoint start needs the full trajectory")
        if not 0 <= from_record < len(full):
            raise InputError(f"record {from_record} outside the full trajectory")
        w0 = full.weights[from_record]
        step0 = int(full.steps[from_record])
    n_steps = cfg.steps - step0
    if n_steps < 1 or n_steps % cfg.stride:
        raise InputError("checkpoint step must leave a whole number of strides")
    jobs_args = []
    for b, idx in enumerate(plan.batches):
        _, _, Xr, Yr = split_arrays(S, idx)
        jobs_args.append((spec, Xr, Yr, w0, cfg.lr, n_steps, cfg.stride, step0, b))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_leave_out_job, jobs_args))
    return [_leave_out_job(a) for a in jobs_args]


@dataclass
class LossDifference:
    times: np.ndarray
    delta_bar: np.ndarray      # (K,)
    per_batch: np.ndarray      # (B, K)
    offset: int = 0            # index into the full record where the grid starts


def aligned_offset(full, leave_outs):
    """Index of the full record matching the leave-out runs' first step."""
    if not leave_outs:
        raise InputError("no leave-out trajectories")
    steps = leave_outs[0].steps
    for lo in leave_outs:
        if not np.array_equal(lo.steps, steps):
            raise InputError("leave-out trajectories have different record grids")
    hits = np.nonzero(full.steps == steps[0])[0]
    if hits.size == 0:
        raise InputError("leave-out grid does not start on a full-run record")
    k0 = int(hits[0])
    if not np.array_equal(full.steps[k0:], steps):
        raise InputError("leave-out grid does not match the full-run grid")
    return k0


def measure_loss_difference(spec, full, leave_outs, plan, S):
    """Batch-wise loss differences on the omitted samples and their mean."""
    plan.validate(S.n)
    if len(leave_outs) != plan.num_batches:
        raise InputError("one leave-out trajectory per batch is required")
    k0 = aligned_offset(full, leave_outs)
    K = len(full) - k0
    per_batch = np.zeros((plan.num_batches, K))
    for k in range(K):
        full_loss, _ = net.loss_and_residual(spec, full.weights[k0 + k], S.inputs, S.targets)
        for b, idx in enumerate(plan.batches):
            per_batch[b, k] = full_loss[idx].mean()
    for b, (idx, lo) in enumerate(zip(plan.batches, leave_outs)):
        Xb, Yb = S.inputs[idx], S.targets[idx]
        for k in range(K):
            per_batch[b, k] = net.train_loss(spec, lo.weights[k], Xb, Yb) - per_batch[b, k]
    return LossDifference(full.times[k0:], per_batch.mean(axis=0), per_batch, k0)


@dataclass
class GapSeries:
    times: np.ndarray
    gap: np.ndarray
    test_loss: np.ndarray
    train_loss: np.ndarray


def measure_generalization_gap(spec, full, S_train, S_test):
    """Held-out loss minus training loss at every record point."""
    if S_test is None or S_test.n == 0:
        raise InputError("empty test set")
    test = np.array([net.train_loss(spec, w, S_test.inputs, S_test.targets)
                     for w in full.weights])
    train = np.array([net.train_loss(spec, w, S_train.inputs, S_train.targets)
                      for w in full.weights])
    return GapSeries(full.times, test - train, test, train)
