"""Tensor value type and the define-by-run tape used for reverse-mode differentiation."""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors.

    ``precision(np.float64)`` is the wide mode used by gradient checks.
    """
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


class Node:
    __slots__ = ("op", "inputs", "output_id", "backward")

    def __init__(self, op: str, inputs: tuple, output_id: int, backward: Callable):
        self.op = op
        self.inputs = inputs
        self.output_id = output_id
        self.backward = backward


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended as ops execute, so every input id precedes its output id.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def reset(self) -> None:
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


_TAPE = Tape()
_GRAD_ENABLED = True
# ids are global so tensors stay distinguishable across tapes
_IDS = itertools.count(1)


def current_tape() -> Tape:
    return _TAPE


@contextlib.contextmanager
def tape():
    """Run a block against a fresh tape, restoring the previous one afterwards."""
    global _TAPE
    prev = _TAPE
    _TAPE = Tape()
    try:
        yield _TAPE
    finally:
        _TAPE = prev


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Dense n-d array that may participate in the autodiff tape.

    Data is stored as a numpy array (float32 by default). The tensor is treated
    as immutable once an op has consumed it.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_IDS)
        self.name = name

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- operator sugar, implemented in ops --------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, p):
        from . import ops
        return ops.power(self, p)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.slice(self, idx)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.reduce_mean(self, axis, keepdims)

    def backward(self):
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
          grad_fn: Callable[[np.ndarray], Iterable]) -> Tensor:
    """Wrap ``out_data`` as the output of a primitive.

    ``grad_fn`` maps the output cotangent to one cotangent per input (``None``
    where an input needs no gradient). It is recorded only when some input
    requires a gradient and grad mode is enabled.
    """
    needs = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        _TAPE.record(Node(op, tuple(inputs), out.node_id, grad_fn))
    return out


def backward(loss: Tensor, retain: bool = False) -> dict:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``loss``.

    Visits tape nodes in exact reverse recording order. Returns a map from
    leaf tensor to its gradient array. The tape is cleared unless ``retain``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    produced = {node.output_id for node in _TAPE.nodes}
    for node in reversed(_TAPE.nodes):
        g = grads.pop(node.output_id, None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.data.shape:
                gi = np.broadcast_to(gi, t.data.shape)
            prev = grads.get(t.node_id)
            grads[t.node_id] = gi if prev is None else prev + gi
            if t.node_id not in produced:
                leaves[t.node_id] = t
    if loss.requires_grad and loss.node_id not in produced:
        leaves[loss.node_id] = loss
    result = {}
    for nid, t in leaves.items():
        g = grads.get(nid)
        if g is None:
            continue
        t.grad = g
        result[t] = g
    if not retain:
        _TAPE.reset()
    return result


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
