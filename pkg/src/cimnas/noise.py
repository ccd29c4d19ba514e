"""Additive i.i.d. Gaussian device noise on weights.

Deployed weights are ``W_dep = W_exp + N`` with every element of ``N`` drawn
independently from ``Normal(mu, sigma**2)``.  The noise is absolute, not
scaled by the weight magnitude.

Noise draws are counter-based so any Monte-Carlo sample can be regenerated
in isolation and in any order.  Each (tensor, sample) pair gets its own
Philox-4x64 stream whose 128-bit key is::

    key[0] = seed                          (mod 2**64)
    key[1] = domain << 56 | sample_index << 16 | stream

``stream`` is the ordinal of the weight tensor in sorted-name order and
``domain`` separates training draws from deployment draws, so a model is
never evaluated on the exact noise instances it was trained with.  Element
``e`` of a tensor is the ``e``-th standard normal produced by its stream.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError
from .tensor import DTYPE

DEPLOY = 0
TRAIN = 1

_MAX_SAMPLE_INDEX = 1 << 40
_MAX_STREAM = 1 << 16


@dataclass(frozen=True)
class NoiseSpec:
    mu: float = 0.0
    sigma: float = 0.04
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")

    @classmethod
    def from_variance(cls, variance: float, mu: float = 0.0, seed: int = 0) -> "NoiseSpec":
        if variance < 0:
            raise ConfigError(f"variance must be >= 0, got {variance}")
        return cls(mu=mu, sigma=float(np.sqrt(variance)), seed=seed)

    @property
    def is_null(self) -> bool:
        return self.sigma == 0 and self.mu == 0

    def to_dict(self) -> dict:
        return asdict(self)


def philox_key(seed: int, sample_index: int, stream: int = 0, domain: int = DEPLOY) -> np.ndarray:
    if not 0 <= sample_index < _MAX_SAMPLE_INDEX:
        raise ConfigError(f"sample_index out of range: {sample_index}")
    if not 0 <= stream < _MAX_STREAM:
        raise ConfigError(f"stream out of range: {stream}")
    hi = (domain & 0xFF) << 56 | sample_index << 16 | stream
    return np.array([seed % (1 << 64), hi], dtype=np.uint64)


def sample_noise(shape, spec: NoiseSpec, sample_index: int, stream: int = 0,
                 domain: int = DEPLOY) -> np.ndarray:
    shape = tuple(shape)
    if spec.is_null:
        return np.zeros(shape, dtype=DTYPE)
    rng = np.random.Generator(np.random.Philox(key=philox_key(spec.seed, sample_index, stream, domain)))
    z = rng.standard_normal(int(np.prod(shape, dtype=np.int64)))
    return (spec.mu + spec.sigma * z).astype(DTYPE).reshape(shape)


def is_device_weight(name: str) -> bool:
    """Whether a parameter lives in the crossbar (weights) or in digital periphery (biases)."""
    return name.endswith("weight")


def noise_map(weights: Mapping[str, np.ndarray], spec: NoiseSpec, sample_index: int,
              domain: int = DEPLOY) -> dict[str, np.ndarray]:
    """One noise tensor per device weight, keyed like ``weights``."""
    names = sorted(n for n in weights if is_device_weight(n))
    return {
        name: sample_noise(weights[name].shape, spec, sample_index, stream, domain)
        for stream, name in enumerate(names)
    }


def apply_noise(weights: Mapping[str, np.ndarray], noise: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = {}
    for name, w in weights.items():
        out[name] = (w + noise[name]).astype(DTYPE) if name in noise else w.copy()
    return out


def perturb(w_exp: Mapping[str, np.ndarray], spec: NoiseSpec, sample_index: int) -> dict[str, np.ndarray]:
    """Return ``w_exp + N_j`` as a fresh map; ``w_exp`` is left untouched."""
    if spec.is_null:
        return {name: w.copy() for name, w in w_exp.items()}
    return apply_noise(w_exp, noise_map(w_exp, spec, sample_index))
