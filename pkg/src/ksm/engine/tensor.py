"""Reverse-mode automatic differentiation over dense numpy arrays.

The engine keeps a dynamic tape: every operation touching a tensor that
requires gradients records a ``TapeNode`` holding the operation's inputs
and a backward rule. ``backward(loss)`` walks the recorded graph once in
reverse topological order and deposits gradients on the leaves.

Two float widths are supported. Training runs use the module default
(float32); oracle comparisons need the headroom of float64 and wrap
themselves in ``use_dtype(np.float64)``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class ContractError(RuntimeError):
    """An API was used outside its contract (non-scalar loss, stale grads, ...)."""


class NonFiniteError(ArithmeticError):
    """Debug mode found NaN or Inf in an operation result."""


_state = {"dtype": np.dtype(np.float32), "debug": False, "tape": True}


def default_dtype() -> np.dtype:
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    _state["dtype"] = np.dtype(dtype)


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily change the dtype new tensors are created with."""
    old = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


def set_debug_checks(enabled: bool) -> None:
    """Toggle finiteness checks on every operation result."""
    _state["debug"] = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation passes)."""
    old = _state["tape"]
    _state["tape"] = False
    try:
        yield
    finally:
        _state["tape"] = old


class TapeNode:
    """One recorded operation.

    ``rule(grad_out)`` returns gradients aligned with ``inputs``; entries
    may be None for inputs that need no gradient.
    """

    __slots__ = ("op", "inputs", "rule")

    def __init__(self, op: str, inputs: tuple, rule: Callable):
        self.op = op
        self.inputs = inputs
        self.rule = rule


class Tensor:
    """A numpy array plus the bookkeeping needed for backward passes."""

    __slots__ = ("data", "requires_grad", "node", "_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else _state["dtype"])
        self.requires_grad = bool(requires_grad)
        self.node: Optional[TapeNode] = None
        self._grad: Optional[np.ndarray] = None

    @property
    def shape(self):
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

    @property
    def grad(self) -> Optional[np.ndarray]:
        """Accumulated gradient; zeros until a backward pass reaches this leaf."""
        if not self.requires_grad:
            return None
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def detach(self) -> "Tensor":
        return lift(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other):
        other = _coerce(other, self)
        data = self.data + other.data
        a, b = self, other

        def rule(g):
            return (
                _unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None,
            )

        return make_op("add", (a, b), data, rule)

    __radd__ = __add__

    def __mul__(self, other):
        other = _coerce(other, self)
        data = self.data * other.data
        a, b = self, other

        def rule(g):
            return (
                _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
            )

        return make_op("mul", (a, b), data, rule)

    __rmul__ = __mul__

    def __sub__(self, other):
        other = _coerce(other, self)
        data = self.data - other.data
        a, b = self, other

        def rule(g):
            return (
                _unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
            )

        return make_op("sub", (a, b), data, rule)

    def __rsub__(self, other):
        return _coerce(other, self).__sub__(self)

    def __truediv__(self, other):
        other = _coerce(other, self)
        data = self.data / other.data
        a, b = self, other

        def rule(g):
            ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
            gb = (
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
                if b.requires_grad
                else None
            )
            return ga, gb

        return make_op("div", (a, b), data, rule)

    def __rtruediv__(self, other):
        return _coerce(other, self).__truediv__(self)

    def __neg__(self):
        a = self

        def rule(g):
            return (-g,)

        return make_op("neg", (a,), -a.data, rule)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self
        p = float(exponent)
        data = a.data ** p

        def rule(g):
            return (g * p * a.data ** (p - 1.0),)

        return make_op("pow", (a,), data, rule)

    def __matmul__(self, other):
        other = _coerce(other, self)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ShapeError("matmul expects 2-D operands")
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
        data = a.data @ b.data

        def rule(g):
            ga = g @ b.data.T if a.requires_grad else None
            gb = a.data.T @ g if b.requires_grad else None
            return ga, gb

        return make_op("matmul", (a, b), data, rule)

    # -- shape and reductions -----------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        data = a.data.reshape(shape)
        orig = a.data.shape

        def rule(g):
            return (g.reshape(orig),)

        return make_op("reshape", (a,), data, rule)

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)
        orig = a.data.shape

        def rule(g):
            if axis is None:
                return (np.broadcast_to(g.reshape((1,) * len(orig)), orig),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, orig),)

        return make_op("sum", (a,), data, rule)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[i] for i in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def exp(self):
        a = self
        data = np.exp(a.data)

        def rule(g):
            return (g * data,)

        return make_op("exp", (a,), data, rule)

    def log(self):
        a = self
        data = np.log(a.data)

        def rule(g):
            return (g / a.data,)

        return make_op("log", (a,), data, rule)


def lift(data: np.ndarray) -> Tensor:
    """Wrap an array as a constant tensor without copying or casting."""
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(data)
    t.requires_grad = False
    t.node = None
    t._grad = None
    return t


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return lift(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_finite(data: np.ndarray) -> None:
    if _state["debug"] and not np.all(np.isfinite(data)):
        raise NonFiniteError("operation produced NaN or Inf")


def make_op(op: str, inputs: Sequence[Tensor], data: np.ndarray, rule: Callable) -> Tensor:
    """Record an operation on the tape and return its output tensor.

    This is also the extension point for custom-gradient operations:
    ``rule(grad_out)`` must return a gradient per input (or None).
    """
    _check_finite(data)
    out = lift(data)
    if _state["tape"] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TapeNode(op, tuple(inputs), rule)
    return out


def backward(loss: Tensor) -> None:
    """Run one reverse sweep from a scalar loss.

    Visits each reachable node exactly once and accumulates gradients on
    leaf tensors (those with ``requires_grad`` and no recorded node).
    Repeated calls keep accumulating; clear with ``zero_grad``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            topo.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(topo):
        g = flowing.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t._grad = np.array(g, copy=True) if t._grad is None else t._grad + g
            continue
        for parent, gp in zip(t.node.inputs, t.node.rule(g)):
            if gp is None or not parent.requires_grad:
                continue
            held = flowing.get(id(parent))
            flowing[id(parent)] = gp if held is None else held + gp
