"""Dense tensors with define-by-run reverse-mode differentiation.

Every differentiable operation creates a new :class:`Tensor` that remembers
its inputs and a closure mapping the output gradient to input gradients.
Each node gets a monotonically increasing sequence number when it is
recorded, so the recorded graph is a tape: :meth:`Tensor.backward` walks the
reachable nodes in exactly the reverse of their recording order.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Optional, Sequence

import numpy as np

_sequence = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: tuple, b: tuple) -> None:
    try:
        np.broadcast_shapes(a, b)
    except ValueError:
        raise ValueError(f"shape mismatch: {a} vs {b}") from None


class Tensor:
    """A real-valued n-d array that can take part in gradient computation.

    Parameters
    ----------
    data : array_like
        Values. Integer input is promoted to float64; float32 is kept.
    requires_grad : bool
        Whether gradients should be accumulated into ``grad``.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._seq = next(_sequence)

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _record(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._seq = next(_sequence)
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- elementwise ----------------------------------------------------------
    def _binary(self, other, forward, grad_a, grad_b) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.data.dtype))
        _check_broadcast(self.shape, other.shape)
        a, b = self.data, other.data
        out = forward(a, b)

        def backward(g):
            return (_unbroadcast(grad_a(g, a, b), a.shape), _unbroadcast(grad_b(g, a, b), b.shape))

        return Tensor._record(out, (self, other), backward)

    def __add__(self, other):
        return self._binary(other, np.add, lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract, lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return Tensor(np.asarray(other, dtype=self.data.dtype)) - self

    def __mul__(self, other):
        return self._binary(other, np.multiply, lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(
            other, np.divide, lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b)
        )

    def __rtruediv__(self, other):
        return Tensor(np.asarray(other, dtype=self.data.dtype)) / self

    def __neg__(self):
        return Tensor._record(-self.data, (self,), lambda g: (-g,))

    def log(self) -> "Tensor":
        if np.any(self.data <= 0):
            raise ValueError("log of non-positive value")
        a = self.data
        return Tensor._record(np.log(a), (self,), lambda g: (g / a,))

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._record(out, (self,), lambda g: (g * out,))

    def clip(self, low: float, high: float) -> "Tensor":
        """Clamp values; the gradient is zero where clamping was active."""
        a = self.data
        mask = (a >= low) & (a <= high)
        return Tensor._record(np.clip(a, low, high), (self,), lambda g: (g * mask,))

    # -- linear algebra -------------------------------------------------------
    def __matmul__(self, other: "Tensor") -> "Tensor":
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ValueError(f"matmul dimension mismatch: {self.shape} @ {other.shape}")
        a, b = self.data, other.data
        return Tensor._record(a @ b, (self, other), lambda g: (g @ b.T, a.T @ g))

    matmul = __matmul__

    # -- reductions -----------------------------------------------------------
    def _check_axis(self, axis):
        if axis is not None and not -self.ndim <= axis < self.ndim:
            raise ValueError(f"axis {axis} out of range for shape {self.shape}")
        n = self.size if axis is None else self.shape[axis]
        if n == 0:
            raise ValueError("reduction over an empty axis")

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        self._check_axis(axis)
        shape = self.shape

        def backward(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._record(np.asarray(self.data.sum(axis=axis)), (self,), backward)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        self._check_axis(axis)
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis) * (1.0 / n)

    def max(self, axis: Optional[int] = None) -> "Tensor":
        """Maximum; the gradient goes to the first maximising position only."""
        self._check_axis(axis)
        a = self.data
        if axis is None:
            idx = int(np.argmax(a))
            out = np.asarray(a.reshape(-1)[idx])

            def backward(g):
                grad = np.zeros(a.size, dtype=a.dtype)
                grad[idx] = g
                return (grad.reshape(a.shape),)

            return Tensor._record(out, (self,), backward)

        idx = np.expand_dims(np.argmax(a, axis=axis), axis)
        out = np.take_along_axis(a, idx, axis).squeeze(axis)

        def backward(g):
            grad = np.zeros_like(a)
            np.put_along_axis(grad, idx, np.expand_dims(g, axis), axis)
            return (grad,)

        return Tensor._record(out, (self,), backward)

    # -- shape ----------------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError:
            raise ValueError(f"cannot reshape {src} into {shape}") from None
        return Tensor._record(out, (self,), lambda g: (g.reshape(src),))

    def __getitem__(self, key) -> "Tensor":
        a = self.data

        basic = all(isinstance(k, (slice, int, type(Ellipsis))) for k in (key if isinstance(key, tuple) else (key,)))

        def backward(g):
            grad = np.zeros_like(a)
            if basic:
                grad[key] = g
            else:
                np.add.at(grad, key, g)
            return (grad,)

        return Tensor._record(a[key], (self,), backward)

    # -- differentiation ------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable ``t``.

        ``self`` must be a scalar unless an explicit seed ``grad`` is given.
        """
        if grad is None:
            if self.size != 1:
                raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return

        nodes = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in nodes:
                continue
            nodes[id(node)] = node
            stack.extend(p for p in node._parents if p.requires_grad)

        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in sorted(nodes.values(), key=lambda t: t._seq, reverse=True):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

        for key, g in grads.items():
            node = nodes[key]
            g = np.asarray(g, dtype=node.data.dtype).reshape(node.shape)
            node.grad = g.copy() if node.grad is None else node.grad + g


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Dispatch one of ``add, sub, mul, neg, log, exp`` by name."""
    a = as_tensor(a)
    if op in ("add", "sub", "mul"):
        if b is None:
            raise ValueError(f"{op} needs two operands")
        b = as_tensor(b)
        return {"add": a.__add__, "sub": a.__sub__, "mul": a.__mul__}[op](b)
    if op == "neg":
        return -a
    if op == "log":
        return a.log()
    if op == "exp":
        return a.exp()
    raise ValueError(f"unknown elementwise op {op!r}")


def reduce(op: str, a: Tensor, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    if op not in ("sum", "mean", "max"):
        raise ValueError(f"unknown reduction {op!r}")
    return getattr(a, op)(axis)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return as_tensor(a) @ as_tensor(b)


def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    arrays = [t.data for t in tensors]
    sizes = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor._record(np.concatenate(arrays, axis=axis), tuple(tensors), backward)
