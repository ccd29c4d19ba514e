"""Signed fixed-point quantization with integer/fraction bit counts.

A :class:`QuantSpec` with ``i`` integer bits and ``f`` fraction bits
represents the grid ``{k * 2**-f}`` restricted to
``[-2**i, 2**i - 2**-f]``.  Values round to the nearest grid point, ties
toward +inf, and saturate at the range bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import DTYPE, Tensor, straight_through

INT_BIT_CHOICES = (0, 1, 2, 3)
FRAC_BIT_CHOICES = (0, 1, 2, 3, 4, 5, 6)


@dataclass(frozen=True)
class QuantSpec:
    int_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.int_bits not in INT_BIT_CHOICES:
            raise ConfigError(f"int_bits must be one of {INT_BIT_CHOICES}, got {self.int_bits}")
        if self.frac_bits not in FRAC_BIT_CHOICES:
            raise ConfigError(f"frac_bits must be one of {FRAC_BIT_CHOICES}, got {self.frac_bits}")

    @property
    def step(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def lower(self) -> float:
        return -(2.0 ** self.int_bits)

    @property
    def upper(self) -> float:
        return 2.0 ** self.int_bits - self.step

    def to_dict(self) -> dict:
        return {"int_bits": self.int_bits, "frac_bits": self.frac_bits}


def quantize_value(x: float, q: QuantSpec) -> float:
    k = math.floor(x / q.step + 0.5)
    k = min(max(k, round(q.lower / q.step)), round(q.upper / q.step))
    return k * q.step


def quantize_array(x: np.ndarray, q: QuantSpec) -> np.ndarray:
    # scaling by a power of two is exact, so float64 floor matches the scalar path
    k = np.floor(np.asarray(x, dtype=np.float64) / q.step + 0.5)
    k = np.clip(k, q.lower / q.step, q.upper / q.step)
    return (k * q.step).astype(DTYPE)


def quantize_tensor(t: Tensor, q: QuantSpec) -> Tensor:
    """Elementwise quantization with a straight-through gradient."""
    return straight_through(t, lambda a: quantize_array(a, q), "quantize")
