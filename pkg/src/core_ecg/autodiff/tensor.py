"""Tensor and reverse-mode graph."""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_ids = itertools.count(1)
_grad_mode = threading.local()


def grad_enabled() -> bool:
    return getattr(_grad_mode, "on", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in this thread."""
    prev = grad_enabled()
    _grad_mode.on = False
    try:
        yield
    finally:
        _grad_mode.on = prev


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible shapes."""


class DTypeError(TypeError):
    """Raised for buffers outside {float32, float64} or mixed-dtype inputs."""


class GraphError(RuntimeError):
    """Raised for invalid backward roots."""


@dataclass(eq=False)
class Node:
    kind: str
    inputs: tuple["Tensor", ...]
    # maps upstream grad -> tuple of grads, one per input (None where not needed)
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    saved: dict = field(default_factory=dict)


class Tensor:
    """A float32/float64 array that can participate in a reverse-mode graph.

    Leaves created with ``requires_grad=True`` accumulate ``.grad`` on
    :func:`backward`. Results of primitives applied to grad-enabled inputs
    carry a :class:`Node` describing how to propagate gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in SUPPORTED_DTYPES:
            if dtype is None and arr.dtype.kind in "iub":
                arr = arr.astype(np.float64)
            else:
                raise DTypeError(f"unsupported dtype {arr.dtype}; expected float32 or float64")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.node_id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; all routes go through the primitive table.
    def __add__(self, other):
        from .primitives import add
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from .primitives import mul, scale
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .primitives import scale
        return scale(self, -1.0)

    def __sub__(self, other):
        from .primitives import add, scale
        if not isinstance(other, Tensor):
            other = Tensor(other, dtype=self.dtype)
        return add(self, scale(other, -1.0))

    def __rsub__(self, other):
        from .primitives import add, scale
        return add(scale(self, -1.0), other)

    def __matmul__(self, other):
        from .primitives import matmul
        return matmul(self, other)


def topological_order(root: Tensor) -> list[Tensor]:
    """Return the grad-carrying subgraph under ``root`` with inputs before consumers."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if t.node_id in seen:
            continue
        seen.add(t.node_id)
        stack.append((t, True))
        if t.node is not None:
            for inp in reversed(t.node.inputs):
                if inp.requires_grad and inp.node_id not in seen:
                    stack.append((inp, False))
    return order


def backward(root: Tensor, retain_graph: bool = False) -> dict[int, np.ndarray]:
    """Propagate d(root)/d(.) through the graph.

    Every grad-enabled leaf has its ``.grad`` accumulated. Returns the map
    node_id -> gradient for the leaves (for every visited tensor when
    ``retain_graph``).
    """
    if not root.requires_grad:
        raise GraphError("backward root is detached (requires_grad=False)")
    if root.data.size != 1:
        raise GraphError(f"backward root must be scalar, got shape {root.shape}")

    order = topological_order(root)
    grads: dict[int, np.ndarray] = {root.node_id: np.ones_like(root.data)}
    for t in reversed(order):
        g = grads.get(t.node_id)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        in_grads = t.node.backward(g)
        for inp, ig in zip(t.node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if ig.shape != inp.shape:
                raise ShapeError(
                    f"{t.node.kind}: backward produced grad of shape {ig.shape} for input of shape {inp.shape}"
                )
            prev = grads.get(inp.node_id)
            grads[inp.node_id] = ig if prev is None else prev + ig
        if not retain_graph:
            t.node.saved.clear()
            del grads[t.node_id]
    return grads


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)
