"""Named architecture presets, parameter construction, and the forward pass."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..engine import Tensor, ops
from .layers import (Activation, ArchitectureSpec, Backbone, BatchNorm, Conv2D, Dense, Dropout,
                     Flatten, MaxPool2D, Reshape, SpecError)

BN_EPS = 1e-3
BN_MOMENTUM = 0.99

# MobileNet 1.0/224 without top, as declared in the Model 1 summaries
MOBILENET_PARAMS = 3_228_864
MOBILENET_NON_TRAINABLE = 21_888
MOBILENET_FEATURES = 1024


def _model2_layers(dropout: float) -> list:
    layers: list = [Conv2D(32, activation="relu"), MaxPool2D(), BatchNorm()]
    for filters in (64, 128, 256):
        layers += [Conv2D(filters, activation="relu"), Conv2D(filters, activation="relu"), MaxPool2D()]
        if filters != 256:
            layers.append(BatchNorm())
    layers += [Flatten(), Dropout(dropout)]
    for units in (256, 128, 64, 32):
        layers += [Dense(units, activation="relu"), BatchNorm()]
    return layers


def _model1_layers(dropout: float) -> list:
    return [Backbone(MOBILENET_FEATURES, MOBILENET_PARAMS, MOBILENET_NON_TRAINABLE, name="mobilenet_1.00_224"),
            Dropout(dropout), BatchNorm(), Dense(256, activation="relu"), Dropout(dropout), BatchNorm()]


def model1a(dropout: float = 0.5) -> ArchitectureSpec:
    return ArchitectureSpec((75, 100, 3), tuple(_model1_layers(dropout)), "sevenway")


def model1b(dropout: float = 0.5) -> ArchitectureSpec:
    layers = [Reshape((75, 100, 3))] + _model1_layers(dropout)
    return ArchitectureSpec((22500,), tuple(layers), "binary")


def model2a(dropout: float = 0.5) -> ArchitectureSpec:
    return ArchitectureSpec((75, 100, 3), tuple(_model2_layers(dropout)), "sevenway")


def model2b(dropout: float = 0.5) -> ArchitectureSpec:
    layers = [Reshape((75, 100, 3))] + _model2_layers(dropout)
    return ArchitectureSpec((22500,), tuple(layers), "binary")


def desk_cnn(input_shape=(48, 64, 3), head: str = "sevenway", filters=(16, 32, 64),
             dense_units=(64,), dropout: float = 0.25) -> ArchitectureSpec:
    """Reduced Model-2-style network (conv→pool→batchnorm blocks, dense+batchnorm tail)."""
    layers: list = []
    for f in filters:
        layers += [Conv2D(f, activation="relu"), MaxPool2D(), BatchNorm()]
    layers += [Flatten(), Dropout(dropout)]
    for u in dense_units:
        layers += [Dense(u, activation="relu"), BatchNorm()]
    return ArchitectureSpec(tuple(input_shape), tuple(layers), head)


def feature_head(input_shape=(48, 64, 3), head: str = "binary", units: int = 64,
                 feature_dim: int = MOBILENET_FEATURES) -> ArchitectureSpec:
    """Small dense head over precomputed features, without batchnorm or dropout.

    With no batch-dependent layers the trained scores stay close to the
    label frequencies of the training data, which keeps them usable as
    calibrated probabilities.
    """
    layers = (Backbone(feature_dim, 0, name="features"), Dense(units, activation="relu"))
    return ArchitectureSpec(tuple(input_shape), layers, head)


PRESETS = {
    "model1a": model1a,
    "model1b": model1b,
    "model2a": model2a,
    "model2b": model2b,
    "desk7": lambda dropout=0.25, input_shape=(48, 64, 3): desk_cnn(input_shape, "sevenway", dropout=dropout),
    "desk2": lambda dropout=0.25, input_shape=(48, 64, 3): desk_cnn(input_shape, "binary", dropout=dropout),
    "head7": lambda input_shape=(48, 64, 3): feature_head(input_shape, "sevenway"),
    "head2": lambda input_shape=(48, 64, 3): feature_head(input_shape, "binary"),
}


def preset(name: str, **kwargs) -> ArchitectureSpec:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise SpecError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**kwargs)


@dataclass
class ModelParams:
    """Named parameter tensors (``layer/param``) with per-tensor trainable flags."""

    tensors: dict[str, Tensor] = field(default_factory=dict)
    trainable: dict[str, bool] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def replace(self, updates: dict[str, Tensor]) -> "ModelParams":
        tensors = dict(self.tensors)
        for name, t in updates.items():
            if name not in tensors:
                raise KeyError(name)
            if t.shape != tensors[name].shape:
                raise ValueError(f"{name}: shape {t.shape} != {tensors[name].shape}")
            tensors[name] = t
        return ModelParams(tensors, dict(self.trainable))

    def counts(self) -> dict[str, int]:
        total = sum(t.size for t in self.tensors.values())
        trainable = sum(t.size for n, t in self.tensors.items() if self.trainable[n])
        return {"total": total, "trainable": trainable, "non_trainable": total - trainable}

    def equals(self, other: "ModelParams") -> bool:
        """Bit-exact equality of names, flags, shapes and values."""
        if list(self.tensors) != list(other.tensors) or self.trainable != other.trainable:
            return False
        return all(self.tensors[n].data.tobytes() == other.tensors[n].data.tobytes()
                   and self.tensors[n].shape == other.tensors[n].shape for n in self.tensors)


def build(spec: ArchitectureSpec, seed: int = 0) -> ModelParams:
    """Allocate and initialize every parameter implied by ``spec``.

    Kernels are He-uniform; biases, beta and moving means are zero; gamma and
    moving variances are one.
    """
    rng = np.random.default_rng(seed)
    params = ModelParams()
    for info in spec.summary():
        for pname, (shape, trainable) in info.params.items():
            if pname == "kernel":
                fan_in = math.prod(shape[:-1])
                limit = math.sqrt(6.0 / fan_in)
                value = rng.uniform(-limit, limit, size=shape)
            elif pname in ("gamma", "moving_variance"):
                value = np.ones(shape)
            else:
                value = np.zeros(shape)
            key = f"{info.name}/{pname}"
            params.tensors[key] = Tensor(value)
            params.trainable[key] = trainable
    return params


def _layer_seed(seed: int | None, index: int) -> int | None:
    if seed is None:
        return None
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _activate(x: Tensor, name: str | None) -> Tensor:
    if name is None:
        return x
    return {"relu": ops.relu, "sigmoid": ops.sigmoid, "softmax": ops.softmax}[name](x)


def forward(params: ModelParams, spec: ArchitectureSpec, batch, mode: str = "infer",
            seed: int | None = 0, output: str = "probs",
            stats_out: dict[str, Tensor] | None = None) -> Tensor:
    """Run a batch through the network.

    ``batch`` is B×(runtime input shape). ``output='probs'`` returns softmax
    probabilities (SevenWay) or the sigmoid probability of Dangerous (Binary),
    shape B×K; ``output='logits'`` returns the pre-activation scores. In train
    mode batchnorm uses batch statistics and, if ``stats_out`` is given, the
    updated moving statistics are stored there by parameter name.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if output not in ("probs", "logits"):
        raise ValueError(f"unknown output {output!r}")
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    expected = spec.runtime_input_shape
    if x.shape[1:] != expected:
        raise ValueError(f"batch shape {x.shape} does not match model input B×{expected}")

    infos = spec.summary()
    start = spec.backbone_index
    start = 0 if start is None else start + 1
    for index, info in enumerate(infos[start:], start=start):
        layer, name = info.layer, info.name
        if isinstance(layer, Conv2D):
            x = ops.conv2d(x, params[f"{name}/kernel"], params[f"{name}/bias"], 1, layer.padding)
            x = _activate(x, layer.activation)
        elif isinstance(layer, Dense):
            x = ops.dense(x, params[f"{name}/kernel"], params[f"{name}/bias"])
            x = _activate(x, layer.activation)
        elif isinstance(layer, MaxPool2D):
            x = ops.maxpool2d(x, layer.pool, layer.pool)
        elif isinstance(layer, BatchNorm):
            res = ops.batchnorm(x, params[f"{name}/gamma"], params[f"{name}/beta"],
                                params[f"{name}/moving_mean"], params[f"{name}/moving_variance"],
                                eps=BN_EPS, mode=mode, momentum=BN_MOMENTUM)
            x = res.output
            if mode == "train" and stats_out is not None:
                stats_out[f"{name}/moving_mean"] = res.moving_mean
                stats_out[f"{name}/moving_variance"] = res.moving_var
        elif isinstance(layer, Dropout):
            x = ops.dropout(x, layer.rate, mode, _layer_seed(seed, index))
        elif isinstance(layer, Flatten):
            x = ops.flatten(x)
        elif isinstance(layer, Reshape):
            x = ops.reshape(x, (x.shape[0],) + tuple(layer.shape))
        elif isinstance(layer, Activation):
            x = _activate(x, layer.function)
        else:  # pragma: no cover - Backbone handled by start offset
            raise SpecError(f"cannot execute layer {name}")

    if output == "logits":
        return x
    return ops.softmax(x) if spec.head == "sevenway" else ops.sigmoid(x)


def predict(params: ModelParams, spec: ArchitectureSpec, inputs: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Inference-mode probabilities for a large array, evaluated in chunks."""
    out = []
    for start in range(0, len(inputs), batch_size):
        out.append(forward(params, spec, inputs[start:start + batch_size], mode="infer").numpy())
    if not out:
        return np.zeros((0, spec.num_outputs), dtype=np.float32)
    return np.concatenate(out, axis=0)
