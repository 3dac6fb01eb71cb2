"""Dense tensor with reverse-mode differentiation.

A ``Tensor`` wraps a numpy array. Operations in :mod:`softprop.numcore.ops`
build a graph of tensors; calling :meth:`Tensor.backward` on a scalar root
walks that graph in reverse topological order and accumulates gradients into
every reachable leaf that has ``requires_grad`` set.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from softprop.errors import NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float32

_state = {"grad_enabled": True, "checked": False}


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


@contextlib.contextmanager
def checked_mode(enabled: bool = True):
    """Validate op inputs and gradients for non-finite values inside the block."""
    prev = _state["checked"]
    _state["checked"] = enabled
    try:
        yield
    finally:
        _state["checked"] = prev


def is_grad_enabled() -> bool:
    return _state["grad_enabled"]


def is_checked() -> bool:
    return _state["checked"]


def check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


class Tensor:
    """N-d array node in a differentiation graph.

    Parameters
    ----------
    data : array_like
        Values; converted to ``dtype`` (float32 unless given).
    requires_grad : bool
        Leaf tensors with this flag receive accumulated gradients.
    name : str, optional
        Used in error messages and checkpoints.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # graph construction -------------------------------------------------

    @staticmethod
    def from_op(data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        """Wrap an op result; records the graph edge only when needed."""
        out = Tensor(data, dtype=data.dtype)
        if _state["grad_enabled"] and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for all reachable leaves."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data) if grad is None else np.asarray(grad, self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if _state["checked"]:
                        check_finite(g, f"gradient of {node!r}")
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(f"gradient shape {pg.shape} does not match tensor shape {parent.shape}")
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar -----------------------------------------------------

    def __add__(self, other):
        from softprop.numcore import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from softprop.numcore import ops

        return ops.add(self, ops.scale(_as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        from softprop.numcore import ops

        return ops.add(_as_tensor(other, self.dtype), ops.scale(self, -1.0))

    def __neg__(self):
        from softprop.numcore import ops

        return ops.scale(self, -1.0)

    def __mul__(self, other):
        from softprop.numcore import ops

        if isinstance(other, (int, float, np.floating)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from softprop.numcore import ops

        return ops.matmul(self, other)

    def reshape(self, *shape):
        from softprop.numcore import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=dtype)


def _topological_order(root: Tensor) -> list:
    # iterative DFS; graphs are DAGs by construction (outputs are always new nodes)
    order, visited, on_stack = [], set(), set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            on_stack.discard(key)
            order.append(node)
            continue
        if key in visited:
            continue
        visited.add(key)
        on_stack.add(key)
        stack.append((node, True))
        for parent in node._parents:
            assert id(parent) not in on_stack, "cycle in tensor graph"
            if id(parent) not in visited:
                stack.append((parent, False))
    return order
