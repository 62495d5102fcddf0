"""Dense float64 tensors with a reverse-mode autodiff tape.

A `Tensor` wraps a numpy array. Operations in `src.core.functional` record a
`Node` on the active `Tape` whenever one of their inputs requires a gradient;
`Tensor.backward()` walks the recorded nodes in reverse creation order.
"""
from __future__ import annotations

import itertools
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
BackwardFn = Callable[[np.ndarray], tuple]

_node_ids = itertools.count()
_state = threading.local()


def _stack() -> list["Tape"]:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that stops operations from being recorded."""

    def __enter__(self):
        self._previous = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._previous
        return False


@dataclass(slots=True, eq=False)
class Node:
    id: int
    kind: str
    inputs: tuple["Tensor", ...]
    backward: BackwardFn
    tape: "Tape | None"

    @property
    def input_ids(self) -> tuple[int | None, ...]:
        return tuple(t.node.id if t.node is not None else None for t in self.inputs)


@dataclass(eq=False)
class Tape:
    nodes: list[Node] = field(default_factory=list)

    def record(self, kind: str, inputs: tuple["Tensor", ...], backward: BackwardFn) -> Node:
        node = Node(next(_node_ids), kind, inputs, backward, self)
        self.nodes.append(node)
        return node

    def clear(self):
        self.nodes.clear()

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    @staticmethod
    def current() -> "Tape | None":
        stack = _stack()
        return stack[-1] if stack else None


def record(kind: str, inputs: tuple["Tensor", ...], backward: BackwardFn) -> Node:
    """Node for an op result, kept on the innermost open tape; without one only the result references it."""
    tape = Tape.current()
    if tape is not None:
        return tape.record(kind, inputs, backward)
    return Node(next(_node_ids), kind, inputs, backward, None)


def run_backward(root: "Tensor", grad: np.ndarray | None = None):
    seed = np.ones_like(root.data) if grad is None else np.asarray(grad, dtype=np.float64)
    if seed.shape != root.data.shape:
        from src.utils.errors import DimensionError
        raise DimensionError(f"Seed gradient shape {seed.shape} does not match {root.shape}")

    if root.node is None:
        if root.requires_grad:
            root._accumulate(seed)
        return

    reachable: dict[int, Node] = {}
    pending = [root.node]
    while pending:
        node = pending.pop()
        if node.id in reachable:
            continue
        reachable[node.id] = node
        for inp in node.inputs:
            if inp.node is not None and inp.node.id not in reachable:
                pending.append(inp.node)

    # ids grow in creation order, so descending id order is a valid reverse topological order
    grads: dict[int, np.ndarray] = {root.node.id: seed}
    for node_id in sorted(reachable, reverse=True):
        node = reachable[node_id]
        g = grads.pop(node_id, None)
        if g is None:
            continue
        for inp, input_grad in zip(node.inputs, node.backward(g)):
            if input_grad is None or not inp.requires_grad:
                continue
            if inp.node is not None:
                key = inp.node.id
                grads[key] = grads[key] + input_grad if key in grads else input_grad
            else:
                inp._accumulate(input_grad)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(array, dtype=np.float64)
        out.requires_grad = False
        out.grad = None
        out.node = None
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad = self.grad + grad

    def backward(self, grad: np.ndarray | None = None):
        run_backward(self, grad)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return F.add(self, other)

    def __radd__(self, other):
        return F.add(other, self)

    def __sub__(self, other):
        return F.sub(self, other)

    def __rsub__(self, other):
        return F.sub(other, self)

    def __mul__(self, other):
        return F.mul(self, other)

    def __rmul__(self, other):
        return F.mul(other, self)

    def __truediv__(self, other):
        return F.div(self, other)

    def __rtruediv__(self, other):
        return F.div(other, self)

    def __neg__(self):
        return F.neg(self)

    def __matmul__(self, other):
        return F.matmul(self, other)

    def __getitem__(self, index):
        return F.getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def swapaxes(self, axis1: int, axis2: int):
        return F.swapaxes(self, axis1, axis2)

    @property
    def T(self):
        return F.swapaxes(self, -1, -2)


def tensor(data: ArrayLike, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=np.float64))


from src.core import functional as F  # noqa: E402
