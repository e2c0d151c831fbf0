"""Declarative network descriptions and their text format.

A spec file is plain text, one directive per line; ``#`` starts a comment::

    name toy-afcn
    input_channels 3
    output_stride 16
    input_size 64 64          # optional; fixed input for classifiers
    input_transform mean=128/255 scale=10   # optional; (x - mean) * scale
    conv name=conv1 out=16 k=3 stride=1 pad=1
    relu
    maxpool k=2 stride=2
    conv name=conv5 out=2 k=1 lr_mult=0.5 trainable=0
    softmax

Layer kinds are ``conv``, ``relu``, ``maxpool``, ``avgpool`` and
``softmax`` (the head).  ``conv`` may carry ``in=`` to assert the incoming
channel count; otherwise it is inferred from the previous layer.
"""
import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

KINDS = ("conv", "relu", "maxpool", "avgpool", "softmax")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str = ""
    out: int = 0
    k: int = 1
    stride: int = 1
    pad: int = 0
    lr_mult: float = 1.0
    trainable: bool = True
    in_channels: int = 0

    def to_line(self):
        if self.kind == "conv":
            parts = [f"conv name={self.name} out={self.out} k={self.k} stride={self.stride} pad={self.pad}"]
            if self.in_channels:
                parts.append(f"in={self.in_channels}")
            if self.lr_mult != 1.0:
                parts.append(f"lr_mult={self.lr_mult!r}")
            if not self.trainable:
                parts.append("trainable=0")
            return " ".join(parts)
        if self.kind in ("maxpool", "avgpool"):
            return f"{self.kind} k={self.k} stride={self.stride}"
        return self.kind


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_channels: int
    layers: tuple
    output_stride: int = 0
    input_size: tuple = None
    input_mean: float = 0.0  # inputs enter the first layer as (x - input_mean) * input_scale
    input_scale: float = 1.0
    channel_plan: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "channel_plan", self._validate())

    def _validate(self):
        if self.input_channels < 1:
            raise SpecError("input_channels must be positive")
        if not self.input_scale > 0:
            raise SpecError("input_transform scale must be positive")
        channels = self.input_channels
        plan = []
        heads = [i for i, layer in enumerate(self.layers) if layer.kind == "softmax"]
        if len(heads) != 1:
            raise SpecError(f"expected exactly one softmax head, found {len(heads)}")
        if heads[0] != len(self.layers) - 1:
            raise SpecError("softmax head must be the last layer")
        names = set()
        for i, layer in enumerate(self.layers):
            if layer.kind not in KINDS:
                raise SpecError(f"layer {i}: unknown kind {layer.kind!r}")
            if layer.kind == "conv":
                if layer.out < 1:
                    raise SpecError(f"layer {i} ({layer.name}): conv needs out >= 1")
                if layer.in_channels and layer.in_channels != channels:
                    raise SpecError(
                        f"layer {i} ({layer.name}): declared in={layer.in_channels} "
                        f"but previous layer yields {channels} channels"
                    )
                if not layer.name or layer.name in names:
                    raise SpecError(f"layer {i}: conv layers need unique names")
                names.add(layer.name)
                if layer.k < 1 or layer.stride < 1 or layer.pad < 0:
                    raise SpecError(f"layer {i} ({layer.name}): bad geometry")
                plan.append((channels, layer.out))
                channels = layer.out
            elif layer.kind in ("maxpool", "avgpool") and (layer.k < 1 or layer.stride < 1):
                raise SpecError(f"layer {i}: bad pool geometry")
        if channels < 2:
            raise SpecError("softmax head needs at least 2 input channels")
        if self.output_stride and self.output_stride != self.total_stride:
            raise SpecError(
                f"declared output_stride {self.output_stride} != product of strides {self.total_stride}"
            )
        return tuple(plan)

    @property
    def total_stride(self):
        s = 1
        for layer in self.layers:
            if layer.kind in ("conv", "maxpool", "avgpool"):
                s *= layer.stride
        return s

    @property
    def has_input_transform(self):
        return self.input_mean != 0.0 or self.input_scale != 1.0

    @property
    def head_channels(self):
        return self.channel_plan[-1][1]

    @property
    def conv_layers(self):
        return [layer for layer in self.layers if layer.kind == "conv"]

    def output_size(self, height, width):
        """Closed-form output map size; may be <= 0 if the input is too small."""
        h, w = height, width
        for layer in self.layers:
            if layer.kind == "conv":
                h = (h + 2 * layer.pad - layer.k) // layer.stride + 1
                w = (w + 2 * layer.pad - layer.k) // layer.stride + 1
            elif layer.kind in ("maxpool", "avgpool"):
                h = (h - layer.k) // layer.stride + 1
                w = (w - layer.k) // layer.stride + 1
            if h < 1 or w < 1:
                return min(h, 0), min(w, 0)
        return h, w

    def to_text(self):
        lines = [f"name {self.name}", f"input_channels {self.input_channels}"]
        if self.output_stride:
            lines.append(f"output_stride {self.output_stride}")
        if self.input_size:
            lines.append(f"input_size {self.input_size[0]} {self.input_size[1]}")
        if self.has_input_transform:
            lines.append(f"input_transform mean={self.input_mean!r} scale={self.input_scale!r}")
        lines.extend(layer.to_line() for layer in self.layers)
        return "\n".join(lines) + "\n"

    def hash(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


_INT_KEYS = {"out": "out", "k": "k", "stride": "stride", "pad": "pad", "in": "in_channels"}


def parse_spec(text, source="<string>"):
    name, input_channels, output_stride, input_size = None, None, 0, None
    transform = {"mean": 0.0, "scale": 1.0}
    layers = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        where = f"{source}:{lineno}"
        try:
            if head == "name":
                name = rest[0]
            elif head == "input_channels":
                input_channels = int(rest[0])
            elif head == "output_stride":
                output_stride = int(rest[0])
            elif head == "input_size":
                input_size = (int(rest[0]), int(rest[1]))
            elif head == "input_transform":
                for token in rest:
                    key, _, value = token.partition("=")
                    if key not in transform:
                        raise SpecError(f"{where}: unknown field {key!r}")
                    transform[key] = float(Fraction(value))
            elif head in KINDS:
                kw = {}
                for token in rest:
                    key, _, value = token.partition("=")
                    if key in _INT_KEYS:
                        kw[_INT_KEYS[key]] = int(value)
                    elif key == "name":
                        kw["name"] = value
                    elif key == "lr_mult":
                        kw["lr_mult"] = float(value)
                    elif key == "trainable":
                        kw["trainable"] = value not in ("0", "false", "no")
                    else:
                        raise SpecError(f"{where}: unknown field {key!r}")
                layers.append(LayerSpec(head, **kw))
            else:
                raise SpecError(f"{where}: unknown directive {head!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(f"{where}: malformed line {raw.strip()!r}") from exc
    if name is None or input_channels is None:
        raise SpecError(f"{source}: spec needs 'name' and 'input_channels'")
    return NetworkSpec(name, input_channels, layers, output_stride, input_size,
                       transform["mean"], transform["scale"])


def builtin_specs():
    root = resources.files("hfcn") / "specs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".spec"))


def load_spec(ref):
    """Load a spec by file path or by builtin name (e.g. ``toy_afcn``)."""
    path = Path(ref)
    if path.suffix == ".spec" and path.exists():
        return parse_spec(path.read_text(), str(path))
    res = resources.files("hfcn") / "specs" / f"{ref}.spec"
    if res.is_file():
        return parse_spec(res.read_text(), f"builtin:{ref}")
    raise FileNotFoundError(f"no spec file or builtin spec named {ref!r}")
