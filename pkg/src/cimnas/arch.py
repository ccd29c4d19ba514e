"""Network templates and the architecture JSON schema consumed by ``train``.

Two templates exist:

``mlp``
    Flatten, then ``len(hidden)`` dense+activation layers, then a dense
    output layer.
``cnn``
    A stack of stride-1 "same"-padded convolutions each followed by ReLU,
    a flatten, ``len(fc) - 1`` dense+ReLU hidden layers of width
    ``fc_hidden`` and a dense output layer.  Every conv and dense layer has
    its own :class:`QuantSpec`; an activation is quantized with the format of
    the layer feeding it.  The output logits are never quantized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .nn import Conv2d, Dense, Flatten, Model, ReLU, Sigmoid
from .quant import QuantSpec


@dataclass(frozen=True)
class ConvChoice:
    channels: int
    filter_size: int
    quant: QuantSpec


@dataclass(frozen=True)
class CNNArch:
    conv: tuple[ConvChoice, ...]
    fc_quant: tuple[QuantSpec, ...]
    fc_hidden: int = 1024
    input_shape: tuple[int, int, int] = (3, 32, 32)
    num_classes: int = 10
    tokens: tuple[int, ...] | None = field(default=None, compare=False)

    def layers(self) -> list:
        layers = []
        in_ch = self.input_shape[0]
        for i, c in enumerate(self.conv):
            layers.append(Conv2d(f"conv{i + 1}", in_ch, c.channels, c.filter_size, "same", c.quant))
            layers.append(ReLU(c.quant))
            in_ch = c.channels
        layers.append(Flatten())
        width = in_ch * self.input_shape[1] * self.input_shape[2]
        n_fc = len(self.fc_quant)
        for j, q in enumerate(self.fc_quant):
            last = j == n_fc - 1
            out = self.num_classes if last else self.fc_hidden
            layers.append(Dense(f"fc{j + 1}", width, out, q))
            if not last:
                layers.append(ReLU(q))
            width = out
        return layers

    def to_dict(self) -> dict:
        d = {
            "template": "cnn",
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "fc_hidden": self.fc_hidden,
            "conv": [
                {"channels": c.channels, "filter": c.filter_size, **c.quant.to_dict()} for c in self.conv
            ],
            "fc": [q.to_dict() for q in self.fc_quant],
        }
        if self.tokens is not None:
            d["tokens"] = list(self.tokens)
        return d


@dataclass(frozen=True)
class MLPArch:
    hidden: tuple[int, ...] = (256,)
    activation: str = "relu"
    input_shape: tuple[int, ...] = (1, 28, 28)
    num_classes: int = 10

    def layers(self) -> list:
        act = {"relu": ReLU, "sigmoid": Sigmoid}[self.activation]
        width = 1
        for s in self.input_shape:
            width *= s
        layers = [Flatten()]
        for i, h in enumerate(self.hidden):
            layers += [Dense(f"fc{i + 1}", width, h), act()]
            width = h
        layers.append(Dense(f"fc{len(self.hidden) + 1}", width, self.num_classes))
        return layers

    def to_dict(self) -> dict:
        return {
            "template": "mlp",
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "hidden": list(self.hidden),
            "activation": self.activation,
        }


def arch_from_dict(d: dict):
    try:
        template = d["template"]
        if template == "mlp":
            if d.get("activation", "relu") not in ("relu", "sigmoid"):
                raise ConfigError(f"unknown activation {d['activation']!r}")
            return MLPArch(
                hidden=tuple(d.get("hidden", (256,))),
                activation=d.get("activation", "relu"),
                input_shape=tuple(d["input_shape"]),
                num_classes=int(d.get("num_classes", 10)),
            )
        if template == "cnn":
            conv = tuple(
                ConvChoice(int(c["channels"]), int(c["filter"]), QuantSpec(int(c["int_bits"]), int(c["frac_bits"])))
                for c in d["conv"]
            )
            fc = tuple(QuantSpec(int(q["int_bits"]), int(q["frac_bits"])) for q in d["fc"])
            if not fc:
                raise ConfigError("cnn template needs at least one fc layer")
            tokens = tuple(d["tokens"]) if "tokens" in d else None
            return CNNArch(conv, fc, int(d.get("fc_hidden", 1024)), tuple(d["input_shape"]),
                           int(d.get("num_classes", 10)), tokens)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed architecture description: {exc!r}") from exc
    raise ConfigError(f"unknown template {d.get('template')!r}")


def load_arch(path):
    return arch_from_dict(json.loads(Path(path).read_text()))


def save_arch(path, arch) -> None:
    Path(path).write_text(json.dumps(arch.to_dict(), indent=2, sort_keys=True) + "\n")


def build_model(arch, seed: int = 0, quantized: bool = False, params=None) -> Model:
    return Model(arch.layers(), arch.input_shape, params=params, seed=seed, quantized=quantized)
