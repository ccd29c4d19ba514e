"""Layer descriptors, the :class:`Model` container and the training primitives."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import GraphError, ShapeError
from .quant import QuantSpec, quantize_tensor
from .tensor import DTYPE, Tensor, conv2d, getitem, linear, log_softmax, mean, no_grad, relu, reshape, sigmoid


@dataclass(frozen=True)
class Conv2d:
    name: str
    in_channels: int
    out_channels: int
    kernel_size: int
    padding: str = "same"
    quant: QuantSpec | None = None


@dataclass(frozen=True)
class Dense:
    name: str
    in_features: int
    out_features: int
    quant: QuantSpec | None = None


@dataclass(frozen=True)
class ReLU:
    quant: QuantSpec | None = None


@dataclass(frozen=True)
class Sigmoid:
    quant: QuantSpec | None = None


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Union[Conv2d, Dense, ReLU, Sigmoid, Flatten]


def _describe(layer: Layer) -> str:
    name = getattr(layer, "name", None)
    kind = type(layer).__name__
    return f"{kind} {name!r}" if name else kind


def _output_shape(layer: Layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(layer, Conv2d):
        if len(shape) != 3 or shape[0] != layer.in_channels:
            raise ShapeError(
                f"layer {_describe(layer)}: expects ({layer.in_channels}, H, W) input, got {shape}"
            )
        k = layer.kernel_size
        if layer.padding == "same":
            if k % 2 == 0:
                raise ShapeError(f"layer {_describe(layer)}: 'same' padding needs an odd kernel")
            return (layer.out_channels, shape[1], shape[2])
        h, w = shape[1] - k + 1, shape[2] - k + 1
        if h < 1 or w < 1:
            raise ShapeError(f"layer {_describe(layer)}: kernel {k} exceeds input {shape[1:]}")
        return (layer.out_channels, h, w)
    if isinstance(layer, Dense):
        if len(shape) != 1 or shape[0] != layer.in_features:
            raise ShapeError(
                f"layer {_describe(layer)}: expects ({layer.in_features},) input, got {shape}"
            )
        return (layer.out_features,)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    return shape


def param_shapes(layer: Layer) -> dict[str, tuple[int, ...]]:
    if isinstance(layer, Conv2d):
        k = layer.kernel_size
        return {
            f"{layer.name}.weight": (layer.out_channels, layer.in_channels, k, k),
            f"{layer.name}.bias": (layer.out_channels,),
        }
    if isinstance(layer, Dense):
        return {
            f"{layer.name}.weight": (layer.out_features, layer.in_features),
            f"{layer.name}.bias": (layer.out_features,),
        }
    return {}


def init_params(layers: Sequence[Layer], seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, drawn in layer order."""
    rng = np.random.default_rng(seed)
    params = {}
    for layer in layers:
        for name, shape in param_shapes(layer).items():
            if name.endswith(".bias"):
                params[name] = np.zeros(shape, dtype=DTYPE)
                continue
            receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
            fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(DTYPE)
    return params


class Model:
    """An ordered stack of layers plus a named parameter map.

    ``quantized`` switches fixed-point quantization of weights and
    activations on or off for every layer that carries a :class:`QuantSpec`.
    """

    def __init__(self, layers: Sequence[Layer], input_shape: Sequence[int],
                 params: Mapping[str, np.ndarray] | None = None, seed: int = 0,
                 quantized: bool = False):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.quantized = quantized
        shape = self.input_shape
        expected: dict[str, tuple[int, ...]] = {}
        for layer in self.layers:
            shape = _output_shape(layer, shape)
            for name, pshape in param_shapes(layer).items():
                if name in expected:
                    raise ShapeError(f"duplicate parameter name {name!r}")
                expected[name] = pshape
        if len(shape) != 1:
            raise ShapeError(f"model must end in a vector of logits, final shape is {shape}")
        self.num_classes = shape[0]
        self._param_shapes = expected
        if params is None:
            params = init_params(self.layers, seed)
        self.load_state(params)

    def load_state(self, params: Mapping[str, np.ndarray]) -> None:
        if set(params) != set(self._param_shapes):
            raise ShapeError(
                f"parameter names {sorted(params)} do not match model {sorted(self._param_shapes)}"
            )
        loaded = {}
        for name, shape in self._param_shapes.items():
            arr = np.array(params[name], dtype=DTYPE)
            if arr.shape != shape:
                raise ShapeError(f"parameter {name!r}: expected shape {shape}, got {arr.shape}")
            loaded[name] = arr
        self.params = loaded

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.copy() for name, p in self.params.items()}

    def graph(self, x: np.ndarray, weights: Mapping[str, np.ndarray] | None = None,
              noise: Mapping[str, np.ndarray] | None = None,
              leaves: dict[str, Tensor] | None = None) -> Tensor:
        """Build the forward graph for a batch ``x`` of shape (N, *input_shape).

        Weights are quantized first (when enabled) and the device noise is
        added afterwards.  When ``leaves`` is given, parameters become
        gradient-tracking leaves stored in it.
        """
        weights = self.params if weights is None else weights
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"input: expected (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        h = Tensor(x)
        for layer in self.layers:
            if isinstance(layer, (Conv2d, Dense)):
                w = self._weight(layer, weights, noise, leaves)
                b = self._leaf(f"{layer.name}.bias", weights, leaves)
                if isinstance(layer, Conv2d):
                    h = conv2d(h, w, b, padding=layer.padding)
                else:
                    h = linear(h, w, b)
            elif isinstance(layer, (ReLU, Sigmoid)):
                h = relu(h) if isinstance(layer, ReLU) else sigmoid(h)
                if self.quantized and layer.quant is not None:
                    h = quantize_tensor(h, layer.quant)
            elif isinstance(layer, Flatten):
                h = reshape(h, (h.shape[0], -1))
        return h

    def _leaf(self, name, weights, leaves) -> Tensor:
        t = Tensor(weights[name], requires_grad=leaves is not None)
        if leaves is not None:
            leaves[name] = t
        return t

    def _weight(self, layer, weights, noise, leaves) -> Tensor:
        name = f"{layer.name}.weight"
        w = self._leaf(name, weights, leaves)
        if self.quantized and layer.quant is not None:
            w = quantize_tensor(w, layer.quant)
        if noise is not None and name in noise:
            w = w + Tensor(noise[name])
        return w


def forward(model: Model, input: np.ndarray, weights: Mapping[str, np.ndarray] | None = None,
            noise: Mapping[str, np.ndarray] | None = None, batch_size: int = 1024) -> np.ndarray:
    """Pre-softmax logits for one example or a batch. No parameter is touched."""
    x = np.asarray(input, dtype=DTYPE)
    single = x.shape == model.input_shape
    if single:
        x = x[None]
    outs = []
    with no_grad():
        for start in range(0, len(x), batch_size):
            outs.append(model.graph(x[start : start + batch_size], weights, noise).data)
    logits = np.concatenate(outs) if outs else np.zeros((0, model.num_classes), dtype=DTYPE)
    return logits[0] if single else logits


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(z).all():
        raise ValueError("softmax: non-finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def argmax_class(logits) -> int:
    v = np.asarray(logits)
    if v.size == 0:
        raise ValueError("argmax_class: empty vector")
    # np.argmax returns the first occurrence, i.e. ties go to the lowest index
    return int(np.argmax(v))


@dataclass
class LossValue:
    scalar: float
    per_sample: np.ndarray
    tensor: Tensor | None = field(default=None, repr=False)
    leaves: dict[str, Tensor] | None = field(default=None, repr=False)


def cross_entropy_loss(logits: Tensor, labels) -> LossValue:
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or len(labels) != logits.shape[0]:
        raise ShapeError(f"cross_entropy_loss: logits {logits.shape} vs {len(labels)} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"label out of range [0, {logits.shape[1]})")
    nll = -getitem(log_softmax(logits), (np.arange(len(labels)), labels))
    loss = mean(nll)
    return LossValue(scalar=loss.item(), per_sample=nll.data.copy(), tensor=loss)


def model_loss(model: Model, x: np.ndarray, labels, weights=None, noise=None,
               loss_fn=cross_entropy_loss) -> LossValue:
    """Forward a batch with gradient tracking and attach the parameter leaves."""
    leaves: dict[str, Tensor] = {}
    loss = loss_fn(model.graph(np.asarray(x, dtype=DTYPE), weights, noise, leaves), labels)
    loss.leaves = leaves
    return loss


def backward(model: Model, loss: LossValue) -> dict[str, np.ndarray]:
    """Gradients of ``loss`` with respect to every model parameter."""
    if loss.tensor is None or loss.leaves is None or not loss.tensor.requires_grad:
        raise GraphError("backward() before forward: the loss carries no recorded graph")
    loss.tensor.backward()
    grads = {}
    for name in model.params:
        leaf = loss.leaves.get(name)
        if leaf is None:
            raise GraphError(f"parameter {name!r} did not take part in the forward pass")
        grads[name] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    loss.tensor = None  # the graph is consumed
    return grads


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
    """``p - lr * g`` for every parameter, in float32."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    lr32 = DTYPE(lr)
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"sgd_step: gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        out[name] = (p - lr32 * g).astype(DTYPE) if lr else p.copy()
    return out
