"""Momentum SGD on the logistic surrogate, producing the network that seeds
bound optimization.

Classical heavy-ball updates: v <- momentum * v + g, w <- w - lr * v, over
mini-batches reshuffled each epoch from a counter-based stream, so a run is
bit-reproducible and can resume from a checkpoint mid-training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .nn import MlpArchitecture, surrogate_error, surrogate_loss_and_grad, zero_one_error
from .rng import SHUFFLE, stream


class TrainingDiverged(FloatingPointError):
    """Loss went non-finite; carries the last finite weights seen."""

    def __init__(self, message: str, weights: np.ndarray, epoch: int):
        super().__init__(message)
        self.weights = weights
        self.epoch = epoch


@dataclass
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 100
    epochs: int = 20
    shuffle_seed: int = 0
    eval_every: int = 1  # epochs between history rows

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0,1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class EpochStats:
    epoch: int
    train_surrogate: float
    train_error: float
    test_error: float | None


@dataclass
class TrainResult:
    weights: np.ndarray
    history: list[EpochStats]
    velocity: np.ndarray  # momentum state; saved so a checkpoint can resume


def _evaluate(arch, w, data, test_data, epoch) -> EpochStats:
    return EpochStats(
        epoch=epoch,
        train_surrogate=surrogate_error(arch, w, data.features, data.labels),
        train_error=zero_one_error(arch, w, data.features, data.labels),
        test_error=(
            zero_one_error(arch, w, test_data.features, test_data.labels)
            if test_data is not None
            else None
        ),
    )


def train_sgd(
    arch: MlpArchitecture,
    w0: np.ndarray,
    data: LabeledDataset,
    cfg: SgdConfig,
    test_data: LabeledDataset | None = None,
    start_epoch: int = 0,
    velocity: np.ndarray | None = None,
    extra_grad=None,
) -> TrainResult:
    """Run momentum SGD from `w0`; returns weights, epoch history, velocity.

    Resuming: passing `start_epoch` and the saved `velocity` continues a run
    bit-exactly, because each epoch's shuffle comes from the stream
    (shuffle_seed, "shuffle", epoch).

    `extra_grad`, if given, is a callable w -> (value, gradient) added to the
    surrogate objective (used for explicit regularizers).
    """
    w = arch.check_weights(w0).copy()
    v = np.zeros_like(w) if velocity is None else np.asarray(velocity, dtype=np.float64).copy()
    if v.shape != w.shape:
        raise ValueError(f"velocity shape {v.shape} does not match weights {w.shape}")
    m = data.m
    history: list[EpochStats] = []
    if start_epoch == 0:
        history.append(_evaluate(arch, w, data, test_data, epoch=0))

    last_finite = w.copy()
    for epoch in range(start_epoch, cfg.epochs):
        perm = stream(cfg.shuffle_seed, SHUFFLE, epoch).permutation(m)
        for lo in range(0, m, cfg.batch_size):
            batch = perm[lo : lo + cfg.batch_size]
            try:
                loss, grad = surrogate_loss_and_grad(
                    arch, w, data.features[batch], data.labels[batch]
                )
            except FloatingPointError as exc:
                raise TrainingDiverged(
                    f"diverged at epoch {epoch}: {exc}", last_finite, epoch
                ) from exc
            if extra_grad is not None:
                reg_value, reg_grad = extra_grad(w)
                loss += reg_value
                grad = grad + reg_grad
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", last_finite, epoch
                )
            v *= cfg.momentum
            v += grad
            w -= cfg.learning_rate * v
        last_finite = w.copy()
        if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
            history.append(_evaluate(arch, w, data, test_data, epoch=epoch + 1))
    return TrainResult(weights=w, history=history, velocity=v)
