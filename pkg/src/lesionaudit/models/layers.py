"""Layer descriptors and architecture specs with symbolic shape/parameter accounting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Union

Shape = tuple[int, ...]

ACTIVATIONS = ("relu", "sigmoid", "softmax")


class SpecError(ValueError):
    """Raised when an architecture fails shape propagation or is malformed."""


@dataclass(frozen=True)
class Conv2D:
    filters: int
    kernel: int = 3
    padding: str = "same"
    activation: str | None = None
    name: str | None = None

    kind = "conv2d"

    def output_shape(self, shape: Shape) -> Shape:
        if len(shape) != 3:
            raise SpecError(f"Conv2D expects H×W×C input, got {shape}")
        h, w, _ = shape
        if self.padding == "same":
            return (h, w, self.filters)
        if self.padding == "valid":
            if h < self.kernel or w < self.kernel:
                raise SpecError(f"Conv2D kernel {self.kernel} larger than input {shape}")
            return (h - self.kernel + 1, w - self.kernel + 1, self.filters)
        raise SpecError(f"unknown padding {self.padding!r}")

    def param_shapes(self, shape: Shape) -> dict[str, tuple[Shape, bool]]:
        return {"kernel": ((self.kernel, self.kernel, shape[-1], self.filters), True),
                "bias": ((self.filters,), True)}


@dataclass(frozen=True)
class MaxPool2D:
    pool: int = 2
    name: str | None = None

    kind = "max_pooling2d"

    def output_shape(self, shape: Shape) -> Shape:
        if len(shape) != 3:
            raise SpecError(f"MaxPool2D expects H×W×C input, got {shape}")
        h, w, c = shape
        if h < self.pool or w < self.pool:
            raise SpecError(f"MaxPool2D window {self.pool} larger than input {shape}")
        return (h // self.pool, w // self.pool, c)

    def param_shapes(self, shape: Shape) -> dict:
        return {}


@dataclass(frozen=True)
class BatchNorm:
    name: str | None = None

    kind = "batch_normalization"

    def output_shape(self, shape: Shape) -> Shape:
        return shape

    def param_shapes(self, shape: Shape) -> dict:
        c = (shape[-1],)
        return {"gamma": (c, True), "beta": (c, True),
                "moving_mean": (c, False), "moving_variance": (c, False)}


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str | None = None
    name: str | None = None

    kind = "dense"

    def output_shape(self, shape: Shape) -> Shape:
        if len(shape) != 1:
            raise SpecError(f"Dense expects a flat input, got {shape}")
        return (self.units,)

    def param_shapes(self, shape: Shape) -> dict:
        return {"kernel": ((shape[0], self.units), True), "bias": ((self.units,), True)}


@dataclass(frozen=True)
class Dropout:
    rate: float = 0.5
    name: str | None = None

    kind = "dropout"

    def output_shape(self, shape: Shape) -> Shape:
        if not 0.0 <= self.rate < 1.0:
            raise SpecError(f"Dropout rate must be in [0, 1), got {self.rate}")
        return shape

    def param_shapes(self, shape: Shape) -> dict:
        return {}


@dataclass(frozen=True)
class Flatten:
    name: str | None = None

    kind = "flatten"

    def output_shape(self, shape: Shape) -> Shape:
        return (math.prod(shape),)

    def param_shapes(self, shape: Shape) -> dict:
        return {}


@dataclass(frozen=True)
class Reshape:
    shape: Shape
    name: str | None = None

    kind = "reshape"

    def output_shape(self, shape: Shape) -> Shape:
        if math.prod(shape) != math.prod(self.shape):
            raise SpecError(f"cannot reshape {shape} to {self.shape}")
        return tuple(self.shape)

    def param_shapes(self, shape: Shape) -> dict:
        return {}


@dataclass(frozen=True)
class Activation:
    function: str
    name: str | None = None

    kind = "activation"

    def output_shape(self, shape: Shape) -> Shape:
        if self.function not in ACTIVATIONS:
            raise SpecError(f"unknown activation {self.function!r}")
        return shape

    def param_shapes(self, shape: Shape) -> dict:
        return {}


@dataclass(frozen=True)
class Backbone:
    """Opaque pretrained feature extractor.

    Only its parameter count is declared; at run time the model consumes
    precomputed ``feature_dim`` vectors in its place.
    """

    feature_dim: int
    declared_param_count: int
    declared_non_trainable: int = 0
    name: str | None = None

    kind = "backbone"

    def output_shape(self, shape: Shape) -> Shape:
        return (self.feature_dim,)

    def param_shapes(self, shape: Shape) -> dict:
        return {}


LayerSpec = Union[Conv2D, MaxPool2D, BatchNorm, Dense, Dropout, Flatten, Reshape, Activation, Backbone]
_LAYER_TYPES = {cls.__name__: cls for cls in (Conv2D, MaxPool2D, BatchNorm, Dense, Dropout, Flatten,
                                              Reshape, Activation, Backbone)}

HEADS = {"sevenway": 7, "binary": 1}


@dataclass(frozen=True)
class LayerInfo:
    name: str
    layer: LayerSpec
    output_shape: Shape
    params: dict[str, tuple[Shape, bool]]

    @property
    def param_count(self) -> int:
        if isinstance(self.layer, Backbone):
            return self.layer.declared_param_count
        return sum(math.prod(s) for s, _ in self.params.values())

    @property
    def non_trainable_count(self) -> int:
        if isinstance(self.layer, Backbone):
            return self.layer.declared_non_trainable
        return sum(math.prod(s) for s, trainable in self.params.values() if not trainable)


@dataclass(frozen=True)
class ArchitectureSpec:
    """Input shape, ordered layers, and a classification head.

    The head appends a Dense layer named ``classifier`` with 7 outputs
    (softmax) or 1 output (sigmoid of the Dangerous class).
    """

    input_shape: Shape
    layers: tuple[LayerSpec, ...] = field(default_factory=tuple)
    head: str = "sevenway"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.head not in HEADS:
            raise SpecError(f"unknown head {self.head!r}; expected one of {sorted(HEADS)}")

    @property
    def num_outputs(self) -> int:
        return HEADS[self.head]

    @property
    def backbone_index(self) -> int | None:
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Backbone):
                return i
        return None

    @property
    def runtime_input_shape(self) -> Shape:
        """Shape of one sample fed to ``forward`` (feature vector when a backbone is declared)."""
        i = self.backbone_index
        if i is None:
            return self.input_shape
        return (self.layers[i].feature_dim,)

    def full_layers(self) -> tuple[LayerSpec, ...]:
        return self.layers + (Dense(self.num_outputs, name="classifier"),)

    def summary(self) -> list[LayerInfo]:
        """Propagate shapes through every layer and name them Keras-style."""
        if any(d <= 0 for d in self.input_shape):
            raise SpecError(f"input shape must be positive, got {self.input_shape}")
        shape = self.input_shape
        counters: dict[str, int] = {}
        infos = []
        for layer in self.full_layers():
            name = layer.name
            if name is None:
                k = counters.get(layer.kind, 0)
                counters[layer.kind] = k + 1
                name = layer.kind if k == 0 else f"{layer.kind}_{k}"
            try:
                params = layer.param_shapes(shape)
                out = layer.output_shape(shape)
            except SpecError as exc:
                raise SpecError(f"layer {name}: {exc}") from None
            act = getattr(layer, "activation", None)
            if act is not None and act not in ACTIVATIONS:
                raise SpecError(f"layer {name}: unknown activation {act!r}")
            infos.append(LayerInfo(name, layer, out, params))
            shape = out
        return infos

    @property
    def output_shape(self) -> Shape:
        return self.summary()[-1].output_shape

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            d = {"type": type(layer).__name__}
            d.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(layer).items()
                      if v is not None})
            layers.append(d)
        return {"input_shape": list(self.input_shape), "layers": layers, "head": self.head}

    @classmethod
    def from_dict(cls, data: dict) -> "ArchitectureSpec":
        try:
            layers = []
            for d in data["layers"]:
                d = dict(d)
                layer_cls = _LAYER_TYPES[d.pop("type")]
                allowed = {f.name for f in fields(layer_cls)}
                unknown = set(d) - allowed
                if unknown:
                    raise SpecError(f"unknown fields for {layer_cls.__name__}: {sorted(unknown)}")
                if "shape" in d:
                    d["shape"] = tuple(d["shape"])
                layers.append(layer_cls(**d))
            return cls(tuple(data["input_shape"]), tuple(layers), data.get("head", "sevenway"))
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed architecture: {exc}") from None


def param_count(spec: ArchitectureSpec) -> dict[str, int]:
    """Symbolic parameter totals (no allocation); a declared backbone counts in full."""
    infos = spec.summary()
    total = sum(i.param_count for i in infos)
    non_trainable = sum(i.non_trainable_count for i in infos)
    return {"total": total, "trainable": total - non_trainable, "non_trainable": non_trainable}
