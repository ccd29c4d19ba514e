"""Uncertainty-aware training.

Each batch evaluates the gradient at a noise-perturbed copy of the weights
and applies it to the unperturbed weights::

    W_new = W_ori - lr * grad L(W_ori + N_j; batch)

One noise sample is drawn per batch, with a strictly increasing sample
index over the whole run.  With ``sigma == 0`` the procedure is exactly
plain SGD.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset
from .errors import ConfigError, NonFiniteError
from .evaluation import accuracy
from .nn import LossValue, Model, backward, cross_entropy_loss, model_loss, sgd_step
from .noise import TRAIN, NoiseSpec, noise_map

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 64
    lr: float = 0.05
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(sigma=0.0))
    quantize: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
                "noise": self.noise.to_dict(), "quantize": self.quantize, "seed": self.seed}


@dataclass
class TrainResult:
    epoch_loss: list[float] = field(default_factory=list)
    clean_accuracy: list[float] = field(default_factory=list)
    batches: int = 0
    skipped_batches: int = 0
    noise_indices: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"epoch_loss": self.epoch_loss, "clean_accuracy": self.clean_accuracy,
                "batches": self.batches, "skipped_batches": self.skipped_batches}


AuditHook = Callable[[int, dict, dict | None, np.ndarray, np.ndarray, dict], None]


def noisy_train_batch(model: Model, images: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
                      sample_index: int, noise: dict | None = None,
                      loss_fn=cross_entropy_loss) -> LossValue | None:
    """One uncertainty-aware SGD step; returns None when the batch is skipped.

    ``noise`` overrides the sampled perturbation (for forced-noise checks).
    """
    # (1) keep the original weights; the forward pass never writes to them
    w_ori = model.params
    # (2) one noise instance for the whole batch
    if noise is None and not cfg.noise.is_null:
        noise = noise_map(w_ori, cfg.noise, sample_index, domain=TRAIN)
    # (3) forward and backward at W_ori + N_j
    try:
        loss = model_loss(model, images, labels, noise=noise, loss_fn=loss_fn)
        grads = backward(model, loss)
    except NonFiniteError as exc:
        log.warning("skipping batch %d: %s", sample_index, exc)
        return None
    # (4) update W_ori with the gradient collected at the perturbed point
    model.params = sgd_step(w_ori, grads, cfg.lr)
    return loss


def train(model: Model, dataset: Dataset, cfg: TrainConfig, eval_set: Dataset | None = None,
          audit: AuditHook | None = None, loss_fn=cross_entropy_loss) -> TrainResult:
    """Train in place; deterministic given ``cfg.seed`` and ``cfg.noise.seed``.

    ``audit`` is called after every applied batch with
    ``(sample_index, w_ori, noise, images, labels, w_new)``.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    model.quantized = cfg.quantize
    result = TrainResult()
    counter = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(dataset))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x, y = dataset.images[idx], dataset.labels[idx]
            sample_index = counter
            counter += 1
            result.batches += 1
            w_ori = model.params
            noise = None if cfg.noise.is_null else noise_map(w_ori, cfg.noise, sample_index, domain=TRAIN)
            loss = noisy_train_batch(model, x, y, cfg, sample_index, noise=noise, loss_fn=loss_fn)
            if loss is None:
                result.skipped_batches += 1
                continue
            result.noise_indices.append(sample_index)
            total += loss.scalar * len(idx)
            seen += len(idx)
            if audit is not None:
                audit(sample_index, w_ori, noise, x, y, model.params)
        result.epoch_loss.append(total / seen if seen else float("nan"))
        result.clean_accuracy.append(accuracy(model, model.params, eval_set or dataset))
        log.info("epoch %d: loss %.4f clean accuracy %.4f", epoch + 1, result.epoch_loss[-1],
                 result.clean_accuracy[-1])
    return result
