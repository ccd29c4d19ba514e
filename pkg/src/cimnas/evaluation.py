"""K-sample perturbed evaluation and its distributional reductions.

Each sample re-draws one noise instance for the whole test pass, so the
``K`` accuracies are ``K`` independent simulated deployments.

``p95min`` is the empirical 5th percentile by the nearest-rank rule: the
value at 1-based rank ``ceil(0.05 * K)`` of the ascending samples, i.e. the
level that 95% of deployments reach or exceed.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass

import numpy as np

from .nn import Model, forward
from .noise import NoiseSpec, noise_map

STATISTICS = ("mean", "p95min", "max")


def accuracy(model: Model, weights, dataset, noise=None, batch_size: int = 500) -> float:
    if len(dataset) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    logits = forward(model, dataset.images, weights=weights, noise=noise, batch_size=batch_size)
    # np.argmax breaks ties toward the lowest index, like argmax_class
    correct = int(np.count_nonzero(np.argmax(logits, axis=1) == dataset.labels))
    return correct / len(dataset)


def evaluate_once(model: Model, w_trained, testset, spec: NoiseSpec, sample_index: int) -> float:
    w_trained = model.params if w_trained is None else w_trained
    noise = None if spec.is_null else noise_map(w_trained, spec, sample_index)
    return accuracy(model, w_trained, testset, noise=noise)


def reduce(samples, statistic: str) -> float:
    values = [float(v) for v in samples]
    if not values:
        raise ValueError("cannot reduce an empty sample")
    if statistic == "mean":
        # exact rational summation, correctly rounded once
        return float(statistics.mean(values))
    if statistic == "p95min":
        rank = math.ceil(0.05 * len(values))
        return sorted(values)[max(rank, 1) - 1]
    if statistic == "max":
        return max(values)
    raise ValueError(f"unknown statistic {statistic!r}; choose from {STATISTICS}")


@dataclass
class EvalDistribution:
    samples: list[float]
    clean_accuracy: float
    noise: NoiseSpec

    @property
    def K(self) -> int:
        return len(self.samples)

    @property
    def mean(self) -> float:
        return reduce(self.samples, "mean")

    @property
    def p95min(self) -> float:
        return reduce(self.samples, "p95min")

    @property
    def max(self) -> float:
        return reduce(self.samples, "max")

    def to_dict(self) -> dict:
        return {
            "kind": "eval_distribution",
            "K": self.K,
            "clean_accuracy": self.clean_accuracy,
            "mean": self.mean,
            "p95min": self.p95min,
            "max": self.max,
            "noise": self.noise.to_dict(),
            "samples": list(self.samples),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalDistribution":
        return cls(list(d["samples"]), d["clean_accuracy"], NoiseSpec(**d["noise"]))


def evaluate_distribution(model: Model, w_trained, testset, spec: NoiseSpec, K: int) -> EvalDistribution:
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    w_trained = model.params if w_trained is None else w_trained
    samples = [evaluate_once(model, w_trained, testset, spec, j) for j in range(K)]
    return EvalDistribution(samples, accuracy(model, w_trained, testset), spec)
