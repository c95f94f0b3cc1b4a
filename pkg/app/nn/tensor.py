"""Real-valued tensors with an explicit reverse-mode tape.

Operations executed inside ``with Tape() as tape:`` are appended to the tape
in execution order, which is a topological order of the graph; ``backward``
walks it in exact reverse and accumulates gradients additively. Outside a
tape, operations just compute.
"""
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

_default_dtype: ContextVar[type] = ContextVar("default_dtype", default=np.float32)
_active_tape: ContextVar[Optional["Tape"]] = ContextVar("active_tape", default=None)


def default_dtype() -> np.dtype:
    return np.dtype(_default_dtype.get())


@contextmanager
def float64_mode() -> Iterator[None]:
    """Create new tensors in 64-bit precision (gradient checks)"""
    token = _default_dtype.set(np.float64)
    try:
        yield
    finally:
        _default_dtype.reset(token)


class Tensor:
    """Dense n-dimensional array, last axis fastest"""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else default_dtype()
        self.data: np.ndarray = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # Operators delegate to app.nn.ops, imported lazily to avoid the cycle
    def __add__(self, other):
        from app.nn import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from app.nn import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from app.nn import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def sum(self):
        from app.nn import ops
        return ops.sum_all(self)


class Parameter(Tensor):
    """Trainable tensor with a named, always-present gradient buffer"""

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    kind: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Records operation nodes for one forward pass; confined to one worker"""

    def __init__(self):
        self.nodes: List[Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
        """Propagate d(loss) to every leaf that requires grad (Parameters included)"""
        seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype)
        produced = {id(node.output) for node in self.nodes}
        pending: Dict[int, np.ndarray] = {id(loss): seed}
        if id(loss) not in produced:
            _accumulate_leaf(loss, seed)
            return

        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            for tensor, g_in in zip(node.inputs, node.backward(g)):
                if g_in is None or not tensor.requires_grad:
                    continue
                g_in = np.asarray(g_in, dtype=tensor.dtype).reshape(tensor.shape)
                key = id(tensor)
                if key in produced:
                    if key in pending:
                        pending[key] = pending[key] + g_in
                    else:
                        pending[key] = g_in
                else:
                    _accumulate_leaf(tensor, g_in)


def _accumulate_leaf(tensor: Tensor, g: np.ndarray) -> None:
    if tensor.grad is None:
        tensor.grad = np.array(g, dtype=tensor.dtype, copy=True)
    else:
        tensor.grad = tensor.grad + g


def record(kind: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward: BackwardFn) -> Tensor:
    """Wrap an op result and put it on the active tape when gradients are needed"""
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires_grad)
    tape = _active_tape.get()
    if tape is not None and requires_grad:
        tape.record(Node(kind=kind, inputs=tuple(inputs), output=out, backward=backward))
    return out
