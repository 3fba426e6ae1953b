"""Immutable float32 tensors and the gradient tape that records operations on them."""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float32


class Tensor:
    """Dense row-major float32 array with a fixed shape.

    The underlying buffer is read-only; every engine operation returns a new
    tensor. Identity (not value) is used for hashing so tensors can key
    gradient maps.
    """

    __slots__ = ("data", "__weakref__")

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=DTYPE, copy=True, order="C")
        if arr.ndim == 0:
            arr = arr.reshape(())
        view = arr.view()
        view.flags.writeable = False
        self.data = view

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls(np.zeros(tuple(shape), dtype=DTYPE))

    @classmethod
    def ones(cls, shape: Sequence[int]) -> "Tensor":
        return cls(np.ones(tuple(shape), dtype=DTYPE))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the values."""
        return np.array(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic sugar; the ops module does the work
    def __add__(self, other):
        from . import ops
        return ops.add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _lift(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_lift(other), self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def as_tensor(value) -> Tensor:
    return _lift(value)


VJP = Callable[[np.ndarray, tuple], Sequence]


class TapeError(RuntimeError):
    pass


class GradTape:
    """Ordered record of primitive operations for reverse-mode differentiation.

    Use as a context manager; operations executed inside the block are
    recorded when at least one of their inputs is tracked (watched directly
    or produced by a recorded operation).

        with GradTape() as tape:
            tape.watch(w)
            loss = ops.sum(ops.square(w))
        grads = backward(tape, loss)
    """

    def __init__(self) -> None:
        self._records: list[tuple[str, tuple[Tensor, ...], Tensor, VJP]] = []
        self._tracked: dict[int, Tensor] = {}
        self._consumed = False

    def __enter__(self) -> "GradTape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:
            stack.remove(self)

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            self._tracked[id(t)] = t

    def tracks(self, t: Tensor) -> bool:
        return id(t) in self._tracked

    @property
    def operations(self) -> list[str]:
        return [name for name, *_ in self._records]

    @property
    def consumed(self) -> bool:
        return self._consumed

    def _record(self, name: str, inputs: tuple[Tensor, ...], output: Tensor, vjp: VJP) -> None:
        if self._consumed:
            raise TapeError("tape already consumed by a backward pass")
        if not any(id(t) in self._tracked for t in inputs):
            return
        self._records.append((name, inputs, output, vjp))
        self._tracked[id(output)] = output


_local = threading.local()


def _stack() -> list[GradTape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def record(name: str, inputs: Sequence[Tensor], output: Tensor, vjp: VJP) -> Tensor:
    """Register ``output = name(*inputs)`` on every active tape."""
    inputs = tuple(inputs)
    for tape in _stack():
        tape._record(name, inputs, output, vjp)
    return output


def recording() -> bool:
    return bool(_stack())


def backward(tape: GradTape, output: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(output) back through ``tape``.

    Returns a gradient for every tensor tracked by the tape (zeros where the
    output does not depend on it). A tape supports exactly one backward pass.
    """
    if tape._consumed:
        raise TapeError("tape already consumed by a backward pass")
    if output.size != 1:
        raise TapeError(f"backward needs a scalar output, got shape {output.shape}")
    if not tape.tracks(output):
        raise TapeError("output tensor is not on the tape")
    tape._consumed = True

    grads: dict[int, np.ndarray] = {id(output): np.ones(output.shape, dtype=np.float32)}
    for _name, inputs, out, vjp in reversed(tape._records):
        g = grads.get(id(out))
        if g is None:
            continue
        needs = tuple(id(t) in tape._tracked for t in inputs)
        in_grads = vjp(g, needs)
        for t, need, gi in zip(inputs, needs, in_grads):
            if not need or gi is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi, dtype=np.float32)

    result: dict[Tensor, np.ndarray] = {}
    for key, t in tape._tracked.items():
        g = grads.get(key)
        result[t] = np.zeros(t.shape, dtype=np.float32) if g is None else g.reshape(t.shape)
    return result
