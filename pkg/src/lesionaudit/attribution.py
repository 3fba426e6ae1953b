"""Saliency maps, integrated gradients, completeness checks, and mask overlays.

Attributions target the pre-activation score of a class: the softmax logit
for seven-way heads, and ``z`` (Dangerous) or ``-z`` (Benign) for the binary
head's sigmoid logit ``z``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset.images import encode_ppm, to_uint8
from .engine import GradTape, Tensor, backward, ops
from .models import ArchitectureSpec, ModelParams, forward

DIM_FACTOR = 0.3
DEFAULT_STEPS = 64


class AttributionError(ValueError):
    pass


@dataclass
class AttributionMap:
    values: np.ndarray                 # H×W, non-negative, max 1 (or all zero)
    method: str                        # "saliency" | "integrated_gradients"
    target_class: int
    baseline_ref: str | None = None
    steps: int | None = None


@dataclass
class IGResult:
    attributions: np.ndarray           # signed, same shape as the image
    map: AttributionMap
    f_x: float
    f_baseline: float

    @property
    def total(self) -> float:
        return float(self.attributions.sum(dtype=np.float64))


@dataclass
class CompletenessGap:
    value: float
    absolute: bool = False             # True when f(x) - f(x0) was too small to normalize by


@dataclass
class Overlay:
    mask: np.ndarray                   # H×W bool
    pixels: np.ndarray                 # H×W×3 uint8
    q: float
    threshold: float
    metadata: dict = field(default_factory=dict)


def _image_shape(spec: ArchitectureSpec) -> tuple[int, ...]:
    if spec.backbone_index is not None:
        raise AttributionError("attribution needs pixel inputs; this model consumes backbone features")
    return spec.input_shape


def _check_image(spec: ArchitectureSpec, image) -> np.ndarray:
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    shape = _image_shape(spec)
    if arr.shape != shape:
        if arr.size == int(np.prod(shape)) and len(shape) == 1:
            arr = arr.reshape(shape)
        else:
            raise AttributionError(f"image shape {arr.shape} does not match model input {shape}")
    return arr.astype(np.float32)


def resolve_target(params: ModelParams, spec: ArchitectureSpec, image, target="argmax") -> int:
    """Class index for ``target``; ``'argmax'`` picks the predicted class."""
    if isinstance(target, str):
        if target not in ("argmax", "predicted"):
            raise AttributionError(f"unknown target {target!r}")
        probs = forward(params, spec, _check_image(spec, image)[None], mode="infer").numpy()[0]
        return int(probs.argmax()) if spec.head == "sevenway" else int(probs[0] >= 0.5)
    n = spec.num_outputs if spec.head == "sevenway" else 2
    if not 0 <= int(target) < n:
        raise AttributionError(f"target class {target} outside 0..{n - 1}")
    return int(target)


def _target_score(logits: Tensor, spec: ArchitectureSpec, target: int) -> Tensor:
    if spec.head == "sevenway":
        return ops.pick(logits, np.full(logits.shape[0], target))
    z = ops.reshape(logits, (logits.shape[0],))
    return z if target == 1 else ops.neg(z)


def class_score(params: ModelParams, spec: ArchitectureSpec, batch: np.ndarray, target: int) -> np.ndarray:
    """Pre-activation target score for each row of ``batch``."""
    logits = forward(params, spec, batch, mode="infer", output="logits")
    return _target_score(logits, spec, target).numpy().astype(np.float64)


def input_gradients(params: ModelParams, spec: ArchitectureSpec, batch: np.ndarray, target: int) -> np.ndarray:
    """d(target score)/d(input) for every row of ``batch`` (rows are independent in inference)."""
    x = Tensor(batch)
    with GradTape() as tape:
        tape.watch(x)
        logits = forward(params, spec, x, mode="infer", output="logits")
        total = ops.sum(_target_score(logits, spec, target))
    return backward(tape, total)[x]


def _spatial(arr: np.ndarray, spec: ArchitectureSpec) -> np.ndarray:
    """View an attribution in image layout H×W×C."""
    if arr.ndim == 3:
        return arr
    for layer in spec.layers:
        shape = getattr(layer, "shape", None)
        if shape is not None and len(shape) == 3:
            return arr.reshape(shape)
    raise AttributionError("cannot recover an image layout for a flat-input model")


def _normalize(m: np.ndarray) -> np.ndarray:
    peak = m.max() if m.size else 0.0
    return m / peak if peak > 0 else np.zeros_like(m)


def saliency(params: ModelParams, spec: ArchitectureSpec, image, target="argmax") -> AttributionMap:
    """Max over channels of |d score / d pixel|, scaled so the peak is 1."""
    x = _check_image(spec, image)
    cls = resolve_target(params, spec, x, target)
    grad = _spatial(input_gradients(params, spec, x[None], cls)[0].astype(np.float64), spec)
    return AttributionMap(_normalize(np.abs(grad).max(axis=-1)), "saliency", cls)


def integrated_gradients(params: ModelParams, spec: ArchitectureSpec, image, baseline=None,
                         target="argmax", steps: int = DEFAULT_STEPS, batch_size: int = 64) -> IGResult:
    """Midpoint-rule integrated gradients from ``baseline`` (default all zeros) to ``image``.

    The per-pixel map is |sum over channels| of the signed attributions,
    normalized to a peak of 1.
    """
    x = _check_image(spec, image)
    if baseline is None:
        x0, ref = np.zeros_like(x), "zeros"
    else:
        x0 = baseline.data if isinstance(baseline, Tensor) else np.asarray(baseline, dtype=np.float32)
        if x0.shape != x.shape:
            raise AttributionError(f"baseline shape {x0.shape} does not match image {x.shape}")
        ref = "custom"
    if steps < 1:
        raise AttributionError("steps must be >= 1")
    cls = resolve_target(params, spec, x, target)
    diff = (x.astype(np.float64) - x0.astype(np.float64))
    alphas = (np.arange(1, steps + 1) - 0.5) / steps
    total = np.zeros(x.shape, dtype=np.float64)
    for start in range(0, steps, batch_size):
        a = alphas[start:start + batch_size]
        path = (x0[None].astype(np.float64) + a.reshape((-1,) + (1,) * x.ndim) * diff[None]).astype(np.float32)
        total += input_gradients(params, spec, path, cls).astype(np.float64).sum(axis=0)
    attributions = diff * total / steps
    scores = class_score(params, spec, np.stack([x, x0]), cls)
    per_pixel = np.abs(_spatial(attributions, spec).sum(axis=-1))
    amap = AttributionMap(_normalize(per_pixel), "integrated_gradients", cls, ref, steps)
    return IGResult(attributions, amap, float(scores[0]), float(scores[1]))


def completeness_gap(result_or_attributions, f_x: float | None = None, f_x0: float | None = None,
                     floor: float = 1e-8) -> CompletenessGap:
    """|sum(IG) - (f(x) - f(x0))| relative to |f(x) - f(x0)|.

    Falls back to the absolute gap (flagged) when the score difference is
    below ``floor``.
    """
    if isinstance(result_or_attributions, IGResult):
        r = result_or_attributions
        total, f_x, f_x0 = r.total, r.f_x, r.f_baseline
    else:
        total = float(np.asarray(result_or_attributions, dtype=np.float64).sum())
    delta = f_x - f_x0
    err = abs(total - delta)
    if abs(delta) <= floor:
        return CompletenessGap(err, absolute=True)
    return CompletenessGap(err / abs(delta))


def overlay(image, amap, q: float = 0.9, path=None, metadata: dict | None = None) -> Overlay:
    """Keep pixels whose attribution is at or above the q-quantile; dim the rest to 30%.

    The quantile uses the ``lower`` rule, so tied values at the cut are all
    kept (a uniform map keeps the whole image). With ``path`` the overlay is
    written as a binary PPM and the metadata as a JSON sidecar next to it.
    """
    if not 0.0 < q < 1.0:
        raise AttributionError(f"q must be in (0, 1), got {q}")
    img = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    values = amap.values if isinstance(amap, AttributionMap) else np.asarray(amap, dtype=np.float64)
    if img.ndim == 1:
        img = img.reshape(values.shape + (3,))
    if values.shape != img.shape[:2]:
        raise AttributionError(f"map shape {values.shape} does not match image {img.shape[:2]}")
    cut = float(np.quantile(values, q, method="lower"))
    mask = values >= cut
    out = np.where(mask[..., None], img, img * DIM_FACTOR)
    meta = dict(metadata or {})
    meta.update({"q": q, "threshold": cut, "kept_fraction": float(mask.mean())})
    if isinstance(amap, AttributionMap):
        meta.setdefault("method", amap.method)
        meta.setdefault("target_class", amap.target_class)
        if amap.steps is not None:
            meta.setdefault("steps", amap.steps)
        if amap.baseline_ref is not None:
            meta.setdefault("baseline", amap.baseline_ref)
    ov = Overlay(mask, to_uint8(out), q, cut, meta)
    if path is not None:
        path = Path(path)
        path.write_bytes(encode_ppm(ov.pixels))
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return ov
