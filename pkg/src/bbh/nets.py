"""Declarative main-network architectures evaluated against external weights.

A ``NetworkSpec`` only describes layers; the weights live in a
``WeightSet`` (a plain ``dict`` from weight name to Tensor) so the same
spec can be driven by any posterior sampler.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ContractError, DimensionError


@dataclass(frozen=True)
class Dense:
    name: str
    n_in: int
    n_out: int

    @property
    def kernel_shape(self):
        return (self.n_in, self.n_out)


@dataclass(frozen=True)
class Conv:
    name: str
    kh: int
    kw: int
    c_in: int
    c_out: int
    stride: int = 1
    padding: str = "valid"

    @property
    def kernel_shape(self):
        return (self.kh, self.kw, self.c_in, self.c_out)


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class ParamLayer:
    """Per-layer bookkeeping used by posteriors to slice weights."""

    name: str
    kernel_shape: tuple
    fan_in: int
    n_out: int

    @property
    def kernel_name(self):
        return f"{self.name}.kernel"

    @property
    def bias_name(self):
        return f"{self.name}.bias"

    @property
    def slice_size(self):
        return self.fan_in + 1

    @property
    def size(self):
        return self.n_out * self.slice_size


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_shape: tuple
    kind: str = "mlp"
    param_layers: tuple = field(init=False)

    def __post_init__(self):
        params = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                params.append(ParamLayer(layer.name, layer.kernel_shape, layer.n_in, layer.n_out))
            elif isinstance(layer, Conv):
                fan_in = layer.kh * layer.kw * layer.c_in
                params.append(ParamLayer(layer.name, layer.kernel_shape, fan_in, layer.c_out))
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate layer names in {names}")
        object.__setattr__(self, "param_layers", tuple(params))
        _check_extents(self)

    def weight_shapes(self):
        shapes = {}
        for p in self.param_layers:
            shapes[p.kernel_name] = p.kernel_shape
            shapes[p.bias_name] = (p.n_out,)
        return shapes

    def num_params(self):
        return sum(int(np.prod(s)) for s in self.weight_shapes().values())

    @property
    def output_dim(self):
        return self.param_layers[-1].n_out


def _check_extents(spec):
    shape = tuple(spec.input_shape)
    for layer in spec.layers:
        if isinstance(layer, Dense):
            if len(shape) != 1 or shape[0] != layer.n_in:
                raise DimensionError(f"layer {layer.name} expects {layer.n_in} inputs, gets {shape}")
            shape = (layer.n_out,)
        elif isinstance(layer, Conv):
            if len(shape) != 3 or shape[2] != layer.c_in:
                raise DimensionError(f"layer {layer.name} expects {layer.c_in} channels, gets {shape}")
            h, w = shape[0], shape[1]
            if layer.padding == "same":
                h, w = -(-h // layer.stride), -(-w // layer.stride)
            else:
                if layer.kh > h or layer.kw > w:
                    raise DimensionError(f"layer {layer.name}: kernel larger than input {shape}")
                h = (h - layer.kh) // layer.stride + 1
                w = (w - layer.kw) // layer.stride + 1
            shape = (h, w, layer.c_out)
        elif isinstance(layer, MaxPool):
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)


def build_mlp(layer_extents):
    """Dense layers with ReLU between hidden layers and a linear output."""
    extents = [int(e) for e in layer_extents]
    if len(extents) < 2:
        raise ContractError("build_mlp needs at least an input and an output extent")
    if min(extents) < 1:
        raise ContractError("layer extents must be positive")
    layers = []
    for i, (a, b) in enumerate(zip(extents[:-1], extents[1:])):
        if i:
            layers.append(ReLU())
        layers.append(Dense(f"dense{i}", a, b))
    return NetworkSpec(tuple(layers), (extents[0],), kind="mlp")


def build_lenet(num_classes=10, input_shape=(28, 28, 1)):
    """Caffe-style LeNet: conv20-pool-conv50-pool-fc500-fc(num_classes)."""
    if num_classes < 2:
        raise ContractError("LeNet needs at least two classes")
    h, w, c = input_shape
    flat = ((h - 4) // 2 - 4) // 2 * (((w - 4) // 2 - 4) // 2) * 50
    layers = (
        Conv("conv0", 5, 5, c, 20),
        ReLU(),
        MaxPool(),
        Conv("conv1", 5, 5, 20, 50),
        ReLU(),
        MaxPool(),
        Flatten(),
        Dense("dense2", flat, 500),
        ReLU(),
        Dense("dense3", 500, num_classes),
    )
    return NetworkSpec(layers, tuple(input_shape), kind="lenet")


def check_weights(spec, weights):
    expected = spec.weight_shapes()
    missing = set(expected) - set(weights)
    extra = set(weights) - set(expected)
    if missing or extra:
        raise ContractError(f"weight set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, shape in expected.items():
        got = tuple(np.shape(weights[name].data if isinstance(weights[name], ag.Tensor) else weights[name]))
        if got != tuple(shape):
            raise DimensionError(f"weight {name} has shape {got}, expected {tuple(shape)}")


def apply_network(spec, weights, x):
    """Forward pass of ``spec`` with ``weights`` on a batch ``x``."""
    check_weights(spec, weights)
    h = ag.as_tensor(x)
    batch = h.shape[0]
    if h.shape[1:] != tuple(spec.input_shape):
        if int(np.prod(h.shape[1:])) != int(np.prod(spec.input_shape)):
            raise DimensionError(f"input shape {h.shape[1:]} does not match network input {spec.input_shape}")
        h = ag.reshape(h, (batch,) + tuple(spec.input_shape))
    for layer in spec.layers:
        if isinstance(layer, Dense):
            h = ag.matmul(h, ag.as_tensor(weights[f"{layer.name}.kernel"])) + weights[f"{layer.name}.bias"]
        elif isinstance(layer, Conv):
            h = ag.conv2d(h, weights[f"{layer.name}.kernel"], layer.stride, layer.padding)
            h = h + weights[f"{layer.name}.bias"]
        elif isinstance(layer, ReLU):
            h = ag.relu(h)
        elif isinstance(layer, MaxPool):
            h = ag.maxpool2d(h)
        elif isinstance(layer, Flatten):
            h = ag.reshape(h, (batch, -1))
    return h
