"""The search space and its token encoding.

An architecture is a sequence of integer tokens, one per decision slot.
Each conv layer owns four slots (channels, filter size, integer bits,
fraction bits); each FC layer owns two (integer bits, fraction bits).  The
FC widths are fixed: every hidden FC layer has ``fc_hidden`` units and the
last one has ``num_classes``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..arch import CNNArch, ConvChoice
from ..errors import ConfigError
from ..quant import FRAC_BIT_CHOICES, INT_BIT_CHOICES, QuantSpec


@dataclass(frozen=True)
class SearchSpace:
    conv_layers: int = 6
    fc_layers: int = 2
    fc_hidden: int = 1024
    channels: tuple[int, ...] = (24, 36, 48, 64)
    filter_sizes: tuple[int, ...] = (1, 3, 5, 7)
    int_bits: tuple[int, ...] = INT_BIT_CHOICES
    frac_bits: tuple[int, ...] = FRAC_BIT_CHOICES
    input_shape: tuple[int, int, int] = (3, 32, 32)
    num_classes: int = 10
    _slots: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("channels", "filter_sizes", "int_bits", "frac_bits"):
            values = tuple(int(v) for v in getattr(self, name))
            if not values:
                raise ConfigError(f"search space: choice list {name!r} is empty")
            object.__setattr__(self, name, values)
        if self.conv_layers < 0 or self.fc_layers < 1:
            raise ConfigError("search space needs conv_layers >= 0 and fc_layers >= 1")
        if any(c < 1 for c in self.channels):
            raise ConfigError("channel choices must be positive")
        if any(k < 1 or k % 2 == 0 for k in self.filter_sizes):
            raise ConfigError(f"filter sizes must be odd for same padding, got {self.filter_sizes}")
        bad = [b for b in self.int_bits if b not in INT_BIT_CHOICES] + [b for b in self.frac_bits if b not in FRAC_BIT_CHOICES]
        if bad:
            raise ConfigError(f"unsupported bit widths {bad}")
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        slots = []
        for i in range(self.conv_layers):
            slots += [(f"conv{i + 1}.channels", self.channels), (f"conv{i + 1}.filter", self.filter_sizes),
                      (f"conv{i + 1}.int_bits", self.int_bits), (f"conv{i + 1}.frac_bits", self.frac_bits)]
        for j in range(self.fc_layers):
            slots += [(f"fc{j + 1}.int_bits", self.int_bits), (f"fc{j + 1}.frac_bits", self.frac_bits)]
        object.__setattr__(self, "_slots", tuple(slots))

    @property
    def slots(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        return self._slots

    @property
    def cardinalities(self) -> list[int]:
        return [len(choices) for _, choices in self._slots]

    @property
    def size(self) -> int:
        return int(np.prod(self.cardinalities, dtype=object))

    def decode(self, tokens) -> CNNArch:
        tokens = tuple(int(t) for t in tokens)
        if len(tokens) != len(self._slots):
            raise ConfigError(f"expected {len(self._slots)} tokens, got {len(tokens)}")
        values = []
        for t, (name, choices) in zip(tokens, self._slots):
            if not 0 <= t < len(choices):
                raise ConfigError(f"token {t} out of range for slot {name} ({len(choices)} choices)")
            values.append(choices[t])
        conv = tuple(
            ConvChoice(values[4 * i], values[4 * i + 1], QuantSpec(values[4 * i + 2], values[4 * i + 3]))
            for i in range(self.conv_layers)
        )
        base = 4 * self.conv_layers
        fc = tuple(QuantSpec(values[base + 2 * j], values[base + 2 * j + 1]) for j in range(self.fc_layers))
        return CNNArch(conv, fc, self.fc_hidden, self.input_shape, self.num_classes, tokens)

    def encode(self, arch: CNNArch) -> tuple[int, ...]:
        if len(arch.conv) != self.conv_layers or len(arch.fc_quant) != self.fc_layers:
            raise ConfigError("architecture depth does not match the search space")
        values = []
        for c in arch.conv:
            values += [c.channels, c.filter_size, c.quant.int_bits, c.quant.frac_bits]
        for q in arch.fc_quant:
            values += [q.int_bits, q.frac_bits]
        try:
            return tuple(choices.index(v) for v, (_, choices) in zip(values, self._slots))
        except ValueError as exc:
            raise ConfigError(f"architecture is outside the search space: {exc}") from exc

    def random_tokens(self, rng: np.random.Generator) -> tuple[int, ...]:
        return tuple(int(rng.integers(n)) for n in self.cardinalities)

    def to_dict(self) -> dict:
        return {
            "conv_layers": self.conv_layers, "fc_layers": self.fc_layers, "fc_hidden": self.fc_hidden,
            "channels": list(self.channels), "filter_sizes": list(self.filter_sizes),
            "int_bits": list(self.int_bits), "frac_bits": list(self.frac_bits),
            "input_shape": list(self.input_shape), "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__ and k != "_slots"}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown search-space keys {sorted(unknown)}")
        return cls(**known)


def load_space(path) -> SearchSpace:
    return SearchSpace.from_dict(json.loads(Path(path).read_text()))


def micro_space(**overrides) -> SearchSpace:
    """Two conv layers with two options per decision, for desk-scale runs."""
    d = dict(conv_layers=2, fc_layers=2, fc_hidden=32, channels=(4, 8), filter_sizes=(1, 3),
             int_bits=(1, 3), frac_bits=(4, 6))
    d.update(overrides)
    return SearchSpace(**d)
