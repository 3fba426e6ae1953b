"""Losses, Adam, the mini-batch training loop, and evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from .dataset.loader import LabeledArrays
from .dataset.schema import DANGEROUS, LESION_CLASSES
from .engine import GradTape, Tensor, backward, ops
from .fairness import PredictionRecord
from .models import ArchitectureSpec, ModelParams, build, forward

LOG_FLOOR = 1e-12
HEAD_SCHEME = {"sevenway": "lesion7", "binary": "threat"}


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.eps <= 0:
            raise TrainingError("learning_rate and eps must be positive")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.epochs < 0:
            raise TrainingError("epochs must be >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise TrainingError("Adam betas must be in (0, 1)")


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# losses


def cross_entropy_7way(probs: Tensor, labels) -> Tensor:
    """Mean of -log p[label]; probabilities clamped at 1e-12 before the log."""
    labels = np.asarray(labels, dtype=np.int64)
    k = probs.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise TrainingError(f"labels must lie in 0..{k - 1}")
    picked = ops.pick(probs, labels)
    return ops.neg(ops.mean(ops.log(picked, floor=LOG_FLOOR)))


def binary_cross_entropy(scores: Tensor, labels) -> Tensor:
    """Mean of -[y log s + (1-y) log(1-s)] with the same clamping."""
    y = np.asarray(labels, dtype=np.float32).reshape(scores.shape)
    pos = ops.mul(ops.log(scores, floor=LOG_FLOOR), y)
    neg = ops.mul(ops.log(ops.sub(np.float32(1.0), scores), floor=LOG_FLOOR), np.float32(1.0) - y)
    return ops.neg(ops.mean(ops.add(pos, neg)))


def loss_for(spec: ArchitectureSpec, probs: Tensor, labels) -> Tensor:
    if spec.head == "sevenway":
        return cross_entropy_7way(probs, labels)
    return binary_cross_entropy(probs, labels)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState,
              hyper: Hyperparams) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update of every trainable tensor that has a gradient."""
    t = state.step + 1
    m, v = dict(state.m), dict(state.v)
    lr_t = hyper.learning_rate * np.sqrt(1 - hyper.beta2 ** t) / (1 - hyper.beta1 ** t)
    updates = {}
    for name, g in grads.items():
        if not params.trainable.get(name, False):
            continue
        p = params[name]
        g = np.asarray(g, dtype=np.float32)
        if g.shape != p.shape:
            raise TrainingError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        mi = hyper.beta1 * m.get(name, 0.0) + (1 - hyper.beta1) * g
        vi = hyper.beta2 * v.get(name, 0.0) + (1 - hyper.beta2) * g * g
        m[name], v[name] = mi.astype(np.float32), vi.astype(np.float32)
        step = lr_t * m[name] / (np.sqrt(v[name]) + hyper.eps * np.sqrt(1 - hyper.beta2 ** t))
        updates[name] = Tensor(p.data - step.astype(np.float32))
    return params.replace(updates), AdamState(t, m, v)


# ---------------------------------------------------------------------------
# loop


def _check_scheme(spec: ArchitectureSpec, data: LabeledArrays) -> None:
    want = HEAD_SCHEME[spec.head]
    if data.scheme != want:
        raise TrainingError(f"{spec.head} head needs {want!r} labels, dataset provides {data.scheme!r}")


def train_step(params: ModelParams, spec: ArchitectureSpec, x: np.ndarray, y: np.ndarray,
               state: AdamState, hyper: Hyperparams, seed: int):
    trainable = [params[n] for n in params if params.trainable[n]]
    stats: dict[str, Tensor] = {}
    with GradTape() as tape:
        tape.watch(*trainable)
        probs = forward(params, spec, x, mode="train", seed=seed, stats_out=stats)
        loss = loss_for(spec, probs, y)
    g = backward(tape, loss)
    grads = {n: g[params[n]] for n in params if params.trainable[n]}
    params, state = adam_step(params, grads, state, hyper)
    params = params.replace(stats)
    return params, state, loss.item(), probs.data


def _correct(spec: ArchitectureSpec, probs: np.ndarray, y: np.ndarray) -> int:
    if spec.head == "sevenway":
        return int((probs.argmax(axis=1) == y).sum())
    return int(((probs[:, 0] >= 0.5).astype(np.int64) == y).sum())


def train(spec: ArchitectureSpec, data: LabeledArrays, hyper: Hyperparams,
          validation: LabeledArrays | None = None, params: ModelParams | None = None,
          progress=None) -> tuple[ModelParams, TrainHistory]:
    """Mini-batch Adam with a seeded per-epoch reshuffle.

    ``progress(epoch, history, params)`` is called after every epoch.
    """
    if len(data) == 0:
        raise TrainingError("training set is empty")
    _check_scheme(spec, data)
    if data.inputs.shape[1:] != spec.runtime_input_shape:
        raise TrainingError(f"inputs {data.inputs.shape[1:]} do not match model input {spec.runtime_input_shape}")
    params = build(spec, hyper.seed) if params is None else params
    rng = np.random.default_rng(hyper.seed)
    state = AdamState()
    history = TrainHistory()
    n = len(data)
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            seed = int(rng.integers(2**31))
            params, state, loss, probs = train_step(params, spec, data.inputs[idx], data.labels[idx],
                                                    state, hyper, seed)
            total_loss += loss * len(idx)
            correct += _correct(spec, probs, data.labels[idx])
        history.loss.append(total_loss / n)
        history.accuracy.append(correct / n)
        if validation is not None and len(validation):
            bundle_, _ = evaluate(params, spec, validation)
            history.val_accuracy.append(bundle_.accuracy)
        if progress is not None:
            progress(epoch, history, params)
    return params, history


# ---------------------------------------------------------------------------
# evaluation


_DANGER_IDX = [LESION_CLASSES.index(c) for c in LESION_CLASSES if c in DANGEROUS]


def predict_proba(params: ModelParams, spec: ArchitectureSpec, inputs: np.ndarray,
                  batch_size: int = 128) -> np.ndarray:
    out = [forward(params, spec, inputs[s:s + batch_size], mode="infer").numpy()
           for s in range(0, len(inputs), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, spec.num_outputs), np.float32)


def prediction_records(probs: np.ndarray, data: LabeledArrays, threshold: float = 0.5) -> list[PredictionRecord]:
    out = []
    for p, y, r in zip(probs, data.labels, data.records):
        if p.shape[0] == 1:
            s = float(p[0])
            out.append(PredictionRecord(r.sample_id, s, int(s >= threshold), int(y), r.sex, r.tone2, threshold))
        else:
            danger = float(p[_DANGER_IDX].sum())
            out.append(PredictionRecord(r.sample_id, danger, int(p.argmax()), int(y), r.sex, r.tone2,
                                        threshold, tuple(float(v) for v in p)))
    return out


def evaluate(params: ModelParams, spec: ArchitectureSpec, data: LabeledArrays,
             threshold: float = 0.5) -> tuple[metrics.MetricsBundle, list[PredictionRecord]]:
    """Accuracy/AUC/recall plus one PredictionRecord per sample."""
    if len(data) == 0:
        raise TrainingError("evaluation set is empty")
    _check_scheme(spec, data)
    probs = predict_proba(params, spec, data.inputs)
    return metrics.bundle(probs, data.labels, threshold), prediction_records(probs, data, threshold)
