"""Tensor type, gradient tape and reverse-mode replay.

Activations are rank-4 arrays laid out as (batch, row, col, channel) with the
channel axis fastest-varying, so each 1x1xC "fiber" is contiguous in memory.
Parameters (kernels, biases, batch-norm scales) are Tensors of whatever rank
they naturally have.

Gradients are computed by recording every primitive op executed while a
:class:`GradTape` is active and replaying the records in reverse::

    with GradTape() as tape:
        loss = dense_nll_loss(softmax_per_fiber(net(x)), labels)
    tape.backward(loss)
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericError, TapeError

_state = threading.local()


def default_dtype() -> np.dtype:
    """Float type new tensors are created with (float32 unless in checking mode)."""
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def float64_mode():
    """Create tensors in 64-bit for the duration of the block.

    Exists for gradient verification only; the production build is 32-bit.
    """
    previous = default_dtype()
    _state.dtype = np.dtype(np.float64)
    try:
        yield
    finally:
        _state.dtype = previous


class Tensor:
    """A numeric array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


class GradTape:
    """Ordered record of executed primitive ops.

    A tape is single-use per training step and must not be shared between
    threads. Tapes nest; ops record onto the innermost active tape.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "GradTape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape() -> Optional[GradTape]:
    stack = _stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording, e.g. for evaluation passes inside a training step."""
    stack = _stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def check_finite(op: str, data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        raise NumericError(f"{op} produced {bad} non-finite value(s)")


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap the output of a primitive op and record it if any input needs grad.

    ``backward_fn(grad_out)`` must return one gradient array (or None) per input.
    """
    check_finite(op, data)
    out = Tensor(data, dtype=data.dtype)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(_Node(op, inputs, out, backward_fn))
    return out


def backward(loss: Tensor, tape: GradTape) -> None:
    """Populate ``.grad`` on every leaf tensor that requires grad.

    Values consumed by several ops accumulate additively. Leaf gradients are
    added to any gradient already present in the slot.
    """
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    producer = {id(node.output): i for i, node in enumerate(tape.nodes)}
    if id(loss) not in producer:
        raise TapeError("loss was not produced by any op on this tape")
    for i, node in enumerate(tape.nodes):
        for t in node.inputs:
            j = producer.get(id(t))
            if j is not None and j >= i:
                raise TapeError(f"tape cycle: op #{i} ({node.op}) consumes the output of op #{j}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes[: producer[id(loss)] + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        if len(in_grads) != len(node.inputs):
            raise TapeError(f"{node.op} returned {len(in_grads)} gradients for {len(node.inputs)} inputs")
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in producer:
                leaves[key] = t

    for key, t in leaves.items():
        g = grads[key].astype(t.data.dtype, copy=False).reshape(t.shape)
        t.grad = g if t.grad is None else t.grad + g
