"""Sequence training: truncated unroll, cross entropy against clean truth,
RMSprop, early stopping on a held-out validation split.

Targets are always the clean next-frame truth, never the corrupted
measurements; predictions for frame t are scored against truth t+1, so the
last frame of a window has no target and is excluded from the loss.  The
hard-label feedback is a constant input per step, so gradients flow through
the hidden state across the unroll but not through the label path.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import BCE_EPS, RmsPropState, no_grad, rmsprop_step, zero_grads
from .errors import ConfigError, ShapeMismatchError, TrainingDivergedError


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    unroll_length: int = 20
    batch: int = 4
    max_epochs: int = 200
    patience: int = 10
    min_delta: float = 1e-4
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.unroll_length < 2:
            raise ConfigError(f"unroll_length must be >= 2, got {self.unroll_length}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError(
                f"validation_fraction must be in (0,1), got {self.validation_fraction}"
            )
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("batch >= 1, max_epochs >= 1, patience >= 0 required")


@dataclass
class EpochStats:
    epoch: int
    train_bce: float
    val_bce: float
    ms_per_epoch: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val_bce: float = float("inf")
    stopped_early: bool = False
    diverged: bool = False

    def to_csv(self) -> str:
        lines = ["epoch,train_bce,val_bce,ms_per_epoch"]
        for e in self.epochs:
            lines.append(
                f"{e.epoch},{e.train_bce!r},{e.val_bce!r},{e.ms_per_epoch:.3f}"
            )
        return "\n".join(lines) + "\n"


def bce_value(prob: np.ndarray, target: np.ndarray, eps: float = BCE_EPS) -> float:
    """Plain-array mean binary cross entropy (no graph), same clamp as the op."""
    p = np.clip(np.asarray(prob, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(target, dtype=np.float64)
    return float(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean())


def sequence_loss(model, window) -> ad.Tensor:
    """Mean next-frame cross entropy over a window of (measurement, truth)."""
    window = list(window)
    if len(window) < 2:
        raise ShapeMismatchError(
            f"a training window needs at least 2 frames, got {len(window)}"
        )
    height, width = window[0][1].shape
    state = model.initial_state(height, width)
    losses = []
    for t in range(len(window) - 1):
        prob, state = model.step(window[t][0], state)
        losses.append(ad.bce_loss(prob, window[t + 1][1]))
    total = losses[0]
    for term in losses[1:]:
        total = ad.add(total, term)
    return ad.affine(total, 1.0 / len(losses), 0.0)


def evaluate(model, records) -> float:
    """Mean BCE of next-frame predictions over every (sequence, t) pair."""
    scores = []
    with no_grad():
        for record in records:
            state = model.initial_state(record.height, record.width)
            frames = record.frames
            for t in range(len(frames) - 1):
                prob, state = model.step(frames[t][0], state)
                scores.append(bce_value(prob.values, frames[t + 1][1]))
    return float(np.mean(scores))


def split_records(records, validation_fraction: float, rng) -> tuple[list, list]:
    """Deterministic shuffle split; validation gets at least one record."""
    order = rng.permutation(len(records))
    n_val = max(1, round(validation_fraction * len(records)))
    if n_val >= len(records):
        raise ConfigError("dataset too small to hold out a validation split")
    val_idx = set(order[:n_val].tolist())
    train = [records[i] for i in range(len(records)) if i not in val_idx]
    val = [records[i] for i in range(len(records)) if i in val_idx]
    return train, val


def train(model, records, config: TrainConfig) -> TrainReport:
    """Fit in place and leave the model at its best-validation parameters."""
    records = list(records)
    if not records:
        raise ConfigError("training needs at least one record")
    extents = {(r.height, r.width) for r in records}
    if len(extents) != 1:
        raise ConfigError(f"records disagree on extent: {sorted(extents)}")
    for r in records:
        if len(r.frames) < 2:
            raise ConfigError("every record needs at least 2 frames")

    rng = np.random.default_rng([config.seed & 0xFFFFFFFFFFFFFFFF, 0x7472])
    train_records, val_records = split_records(
        records, config.validation_fraction, rng
    )
    params = model.param_tensors()
    opt = RmsPropState.for_params(params)
    steps_per_epoch = -(-len(train_records) // config.batch)

    report = TrainReport()
    best_params = None
    significant_best = float("inf")
    since_improvement = 0
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        window_losses = []
        for _ in range(steps_per_epoch):
            zero_grads(params)
            for _ in range(config.batch):
                record = train_records[rng.integers(len(train_records))]
                length = min(config.unroll_length, len(record.frames))
                offset = int(rng.integers(len(record.frames) - length + 1))
                loss = sequence_loss(model, record.frames[offset : offset + length])
                if not np.isfinite(loss.values):
                    report.diverged = True
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}", report=report
                    )
                loss.backward()
                window_losses.append(loss.item())
            rmsprop_step(params, opt, config.learning_rate)
        val_bce = evaluate(model, val_records)
        elapsed_ms = (time.perf_counter() - started) * 1e3
        report.epochs.append(
            EpochStats(epoch, float(np.mean(window_losses)), val_bce, elapsed_ms)
        )

        # Patience counts epochs without a significant (> min_delta)
        # improvement; the kept checkpoint is the strict minimum regardless.
        if val_bce < significant_best - config.min_delta:
            significant_best = val_bce
            since_improvement = 0
        else:
            since_improvement += 1
        if best_params is None or val_bce < report.best_val_bce:
            report.best_val_bce = val_bce
            report.best_epoch = epoch
            best_params = [p.values.copy() for p in params]
        if since_improvement >= config.patience:
            report.stopped_early = epoch < config.max_epochs
            break

    for p, best in zip(params, best_params):
        p.values = best.copy()
    zero_grads(params)
    return report


def clone_model(model):
    """Deep copy of a model (parameters included)."""
    return copy.deepcopy(model)
