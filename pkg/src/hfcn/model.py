"""Actionness FCNs: construction, inference, pyramid and two-stream fusion."""
import copy
import math

import numpy as np

from . import layers as L
from . import ops
from .netspec import NetworkSpec, SpecError

DEFAULT_SCALES = (1 / math.sqrt(2), 1.0, math.sqrt(2), 2.0)


class Network:
    """A built :class:`NetworkSpec` with float32 parameters.

    ``forward`` runs a batch ``(N, H, W, C)`` and returns softmax
    probabilities; ``backward`` takes the gradient w.r.t. the head logits
    and returns parameter gradients keyed ``"<conv name>.weights"`` /
    ``"<conv name>.bias"``.
    """

    def __init__(self, spec, layers):
        self.spec = spec
        self.layers = layers
        self.loss_history = []

    @property
    def convs(self):
        return [(ls.name, layer) for ls, layer in zip(self.spec.layers, self.layers)
                if ls.kind == "conv"]

    def parameters(self):
        params = {}
        for name, layer in self.convs:
            params[f"{name}.weights"] = layer.weights
            params[f"{name}.bias"] = layer.bias
        return params

    def set_parameters(self, params):
        for name, layer in self.convs:
            w, b = params[f"{name}.weights"], params[f"{name}.bias"]
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise ValueError(f"parameter shape mismatch for layer {name}")
            layer.weights = np.asarray(w, dtype=np.float32)
            layer.bias = np.asarray(b, dtype=np.float32)

    def copy(self):
        return copy.deepcopy(self)

    def output_size(self, height, width):
        return self.spec.output_size(height, width)

    def check_input(self, x):
        if x.shape[-1] != self.spec.input_channels:
            raise ValueError(
                f"channel mismatch: {self.spec.name} expects {self.spec.input_channels} "
                f"input channels, got {x.shape[-1]}"
            )
        h, w = self.output_size(x.shape[-3], x.shape[-2])
        if h < 1 or w < 1:
            raise ValueError(
                f"input {x.shape[-3]}x{x.shape[-2]} too small for {self.spec.name}"
            )

    def forward(self, x, train=False):
        x4, squeeze = ops.as_batch(x)
        self.check_input(x4)
        y = x4.astype(np.float32, copy=False) if x4.dtype != np.float64 else x4
        if self.spec.has_input_transform:
            y = ((y - self.spec.input_mean) * self.spec.input_scale).astype(y.dtype, copy=False)
        for layer in self.layers:
            y = layer.forward(y, cache=train)
        return y[0] if squeeze else y

    def backward(self, dlogits):
        grads = {}
        dy = dlogits
        last = len(self.layers) - 1
        for i, (ls, layer) in enumerate(zip(reversed(self.spec.layers), reversed(self.layers))):
            dy, g = layer.backward(dy, input_grad=i != last)
            for key, value in g.items():
                grads[f"{ls.name}.{key}"] = value
        return grads


def _make_layer(ls, in_channels, rng):
    if ls.kind == "conv":
        fan_in = ls.k * ls.k * in_channels
        w = rng.standard_normal((ls.k, ls.k, in_channels, ls.out)) * math.sqrt(2.0 / fan_in)
        return L.Conv(w.astype(np.float32), np.zeros(ls.out, np.float32), ls.stride, ls.pad)
    if ls.kind == "relu":
        return L.ReLU()
    if ls.kind == "maxpool":
        return L.MaxPool(ls.k, ls.stride)
    if ls.kind == "avgpool":
        return L.AvgPool(ls.k, ls.stride)
    if ls.kind == "softmax":
        return L.SoftmaxHead()
    raise SpecError(f"unknown layer kind {ls.kind!r}")


def build_network(spec: NetworkSpec, seed=0) -> Network:
    """Instantiate ``spec`` with He-scaled Gaussian weights and zero biases."""
    rng = np.random.default_rng(seed)
    built = []
    channels = spec.input_channels
    for ls in spec.layers:
        built.append(_make_layer(ls, channels, rng))
        if ls.kind == "conv":
            channels = ls.out
    return Network(spec, built)


def _require_actionness(net):
    if net.spec.head_channels != 2:
        raise ValueError(f"{net.spec.name} is not an actionness network (head has "
                         f"{net.spec.head_channels} channels)")


def forward_actionness(net, x):
    """Foreground probability map ``(h, w)`` for one ``(H, W, C)`` input."""
    _require_actionness(net)
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"expected an (H, W, C) tensor, got shape {x.shape}")
    oh, ow = net.output_size(*x.shape[:2])
    if oh < 1 or ow < 1:
        raise ValueError(f"input {x.shape[0]}x{x.shape[1]} is too small for the receptive field")
    return net.forward(x)[..., 1]


def forward_actionness_batch(net, xs):
    _require_actionness(net)
    return net.forward(np.asarray(xs))[..., 1]


def multiscale_estimate(net, x, scales=DEFAULT_SCALES):
    """Average of per-scale maps, each upsampled to the input's size."""
    x = np.asarray(x)
    if not len(scales):
        raise ValueError("need at least one scale")
    height, width = x.shape[:2]
    acc = np.zeros((height, width), dtype=np.float64)
    for s in scales:
        if s <= 0:
            raise ValueError(f"scale must be positive, got {s}")
        h, w = max(1, round(height * s)), max(1, round(width * s))
        oh, ow = net.output_size(h, w)
        if oh < 1 or ow < 1:
            raise ValueError(f"scale {s:g} shrinks the input to {h}x{w}, below the receptive field")
        scaled = ops.bilinear_resize(x, h, w)
        amap = forward_actionness(net, scaled)
        acc += ops.bilinear_resize(amap.astype(np.float64), height, width)
    return np.clip(acc / len(scales), 0.0, 1.0)


def hybrid_fuse(appearance_map, motion_map):
    a, m = np.asarray(appearance_map), np.asarray(motion_map)
    if a.shape != m.shape:
        raise ValueError(f"map shapes differ: {a.shape} vs {m.shape}")
    return (a + m) / 2


def boxes_to_binary_map(boxes, height, width):
    """Rasterise half-open pixel boxes ``(x1, y1, x2, y2)`` into a 0/1 map."""
    out = np.zeros((height, width), dtype=np.uint8)
    for x1, y1, x2, y2 in boxes:
        x1, x2 = max(0, int(x1)), min(width, int(x2))
        y1, y2 = max(0, int(y1)), min(height, int(y2))
        if x2 > x1 and y2 > y1:
            out[y1:y2, x1:x2] = 1
    return out
