"""
Dense float64 tensors with tape-based reverse-mode differentiation.

An operation records itself on the innermost active Tape of the calling
thread whenever one of its inputs requires a gradient. Tapes are entered as
context managers:

    with Tape() as tape:
        loss = mse(matmul(x, w), y)
    backward(loss, tape)

Gradients accumulate into the ``grad`` field of leaf tensors (tensors that no
recorded operation produced). Calling ``backward`` twice on the same tape
without zeroing doubles every leaf gradient.
"""

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import GradientError, ShapeError

logger = logging.getLogger(__name__)

_local = threading.local()


def _tape_stack() -> List["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    """Innermost tape entered on the calling thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """
    Dense n-dimensional float64 array with an optional gradient.

    Args:
        values: Anything ``numpy.array`` accepts, or another Tensor (copied).
        requires_grad: Whether backward passes should populate ``grad``.
        name: Optional label used in error messages and checkpoints.
    """

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        source = values.data if isinstance(values, Tensor) else values
        self.data = np.array(source, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data if data.dtype == np.float64 else data.astype(np.float64)
        out.requires_grad = False
        out.grad = None
        out.name = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Flat row-major copy of the data."""
        return self.data.ravel().copy()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Operators delegate to the module-level primitives below.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a constant")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


@dataclass
class TapeRecord:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of primitive operations; inputs always precede their consumers."""

    def __init__(self):
        self.records: List[TapeRecord] = []

    def record(self, entry: TapeRecord):
        self.records.append(entry)

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:
            logger.warning("⚠️ Tape exited out of order; removing it from the stack")
            if self in stack:
                stack.remove(self)
        return False

    def leaves(self) -> List[Tensor]:
        """Tensors requiring gradients that no recorded operation produced."""
        produced = {id(entry.output) for entry in self.records}
        seen: Dict[int, Tensor] = {}
        for entry in self.records:
            for tensor in entry.inputs:
                if tensor.requires_grad and id(tensor) not in produced:
                    seen.setdefault(id(tensor), tensor)
        return list(seen.values())

    def zero_grad(self):
        for tensor in self.leaves():
            tensor.zero_grad()


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` as an op output and record it when any input needs a gradient."""
    out = Tensor._wrap(np.asarray(data))
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape = active_tape()
        if tape is not None:
            tape.record(TapeRecord(op, tuple(inputs), out, backward_fn))
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (
            unbroadcast(g, a.shape) if a.requires_grad else None,
            unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return make_result("add", a.data + b.data, (a, b), backward)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (
            unbroadcast(g, a.shape) if a.requires_grad else None,
            unbroadcast(-g, b.shape) if b.requires_grad else None,
        )

    return make_result("sub", a.data - b.data, (a, b), backward)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (
            unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return make_result("mul", a.data * b.data, (a, b), backward)


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return make_result("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """
    Matrix product over the last two axes; leading axes broadcast.

    Raises:
        ShapeError: inner dimensions disagree, naming both shapes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from e

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_result("matmul", data, (a, b), backward)


def reduce_sum(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def reduce_mean(a: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = range(a.ndim) if axis is None else ((axis,) if isinstance(axis, int) else axis)
    count = int(np.prod([a.shape[i] for i in axes])) if a.ndim else 1

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_result("mean", a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(f"cannot reshape {a.shape} into {tuple(shape)}") from e
    return make_result("reshape", data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: TensorLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    order = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(order))
    return make_result("transpose", a.data.transpose(order), (a,), lambda g: (g.transpose(inverse),))


def index_select(a: TensorLike, index) -> Tensor:
    """Basic or fancy indexing; repeated indices accumulate in the gradient."""
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return make_result("index", a.data[index], (a,), backward)


def backward(loss: Tensor, tape: Tape):
    """
    Populate ``grad`` of every leaf tensor on ``tape`` with d(loss)/d(leaf).

    Args:
        loss: Single-element tensor produced on ``tape``.
        tape: The tape the forward computation was recorded on.

    Raises:
        GradientError: loss is not a scalar or does not depend on any trainable tensor.
    """
    if loss.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("loss does not depend on any tensor that requires a gradient")

    pending: Dict[int, Tuple[Tensor, np.ndarray]] = {id(loss): (loss, np.ones_like(loss.data))}
    for entry in reversed(tape.records):
        upstream = pending.pop(id(entry.output), None)
        if upstream is None:
            continue
        input_grads = entry.backward(upstream[1])
        for tensor, grad in zip(entry.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in pending:
                pending[key] = (tensor, pending[key][1] + grad)
            else:
                pending[key] = (tensor, grad)

    for tensor, grad in pending.values():
        if tensor.grad is None:
            tensor.grad = np.array(grad, dtype=np.float64)
        else:
            tensor.grad = tensor.grad + grad
