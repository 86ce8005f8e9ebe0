"""Reverse-mode gradient engine over numpy arrays.

A ``Var`` wraps an ``ndarray`` value and records the operation that produced
it.  Calling ``backward`` on a scalar ``Var`` walks the recorded graph once in
reverse topological order and accumulates gradients into every reachable
``Var``.  Each graph is built per call; there is no shared mutable state, so
independent gradient computations are thread-safe.

Only operations registered here may appear in a differentiated computation.
Applying an unregistered numpy operation to a ``Var`` fails loudly (see
``UnsupportedOpError``) instead of silently dropping the gradient.

All loss code in this package is written generically: the same expressions
evaluate on plain ``ndarray`` inputs (returning numbers) and on ``Var`` inputs
(returning a differentiable node).  The dispatching helpers at the bottom
(``tanh``, ``exp``, ``log``, ``sqrt``, ...) make that possible.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, UnsupportedOpError

ArrayLike = "np.ndarray | float | int | Var"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A node in the computation graph: an array value plus its provenance."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    # Binary arithmetic with ndarrays must defer to our reflected dunders.
    __array_ufunc__ = None

    def __init__(self, value, _parents: tuple = (), _vjp: Callable | None = None):
        self.value = np.asarray(value, dtype=float)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._vjp = _vjp

    # -- introspection ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape})"

    def __array__(self, dtype=None):
        raise UnsupportedOpError(
            "a Var cannot be consumed by numpy directly; use registered ops or .value"
        )

    def __bool__(self):
        raise UnsupportedOpError("a Var has no truth value; compare .value instead")

    def __float__(self):
        raise UnsupportedOpError("use .item() or .value to read a Var")

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = as_var(other)
        out = Var(
            self.value + other.value,
            (self, other),
            lambda g: (_unbroadcast(g, self.value.shape), _unbroadcast(g, other.value.shape)),
        )
        return out

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_var(other))

    def __rsub__(self, other):
        return as_var(other) + (-self)

    def __mul__(self, other):
        other = as_var(other)
        out = Var(
            self.value * other.value,
            (self, other),
            lambda g: (
                _unbroadcast(g * other.value, self.value.shape),
                _unbroadcast(g * self.value, other.value.shape),
            ),
        )
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_var(other)
        out = Var(
            self.value / other.value,
            (self, other),
            lambda g: (
                _unbroadcast(g / other.value, self.value.shape),
                _unbroadcast(-g * self.value / other.value**2, other.value.shape),
            ),
        )
        return out

    def __rtruediv__(self, other):
        return as_var(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Var):
            raise UnsupportedOpError("only constant exponents are registered")
        exponent = float(exponent)
        out = Var(
            self.value**exponent,
            (self,),
            lambda g: (g * exponent * self.value ** (exponent - 1.0),),
        )
        return out

    def __matmul__(self, other):
        other = as_var(other)
        a, b = self.value, other.value
        if a.ndim == 1 and b.ndim == 1:
            vjp = lambda g: (g * b, g * a)
        elif a.ndim == 2 and b.ndim == 1:
            vjp = lambda g: (np.outer(g, b), a.T @ g)
        elif a.ndim == 1 and b.ndim == 2:
            vjp = lambda g: (b @ g, np.outer(a, g))
        elif a.ndim == 2 and b.ndim == 2:
            vjp = lambda g: (g @ b.T, a.T @ g)
        else:
            raise UnsupportedOpError(f"matmul on shapes {a.shape} @ {b.shape}")
        return Var(a @ b, (self, other), vjp)

    def __rmatmul__(self, other):
        return as_var(other) @ self

    # -- shape ops ----------------------------------------------------------
    def __getitem__(self, key):
        def vjp(g):
            buf = np.zeros_like(self.value)
            np.add.at(buf, key, g)
            return (buf,)

        return Var(self.value[key], (self,), vjp)

    @property
    def T(self):
        return Var(self.value.T, (self,), lambda g: (g.T,))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Var(
            self.value.reshape(shape),
            (self,),
            lambda g: (g.reshape(self.value.shape),),
        )

    # -- reductions ---------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.value.shape).copy(),)

        return Var(self.value.sum(axis=axis, keepdims=keepdims), (self,), vjp)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.value.size
        else:
            count = self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    # -- elementwise nonlinearities ------------------------------------------
    def tanh(self):
        t = np.tanh(self.value)
        return Var(t, (self,), lambda g: (g * (1.0 - t * t),))

    def exp(self):
        e = np.exp(self.value)
        return Var(e, (self,), lambda g: (g * e,))

    def log(self):
        return Var(np.log(self.value), (self,), lambda g: (g / self.value,))

    def sqrt(self):
        s = np.sqrt(self.value)

        def vjp(g):
            # Subgradient 0 at the origin keeps |.| compositions finite.
            return (np.where(s > 0.0, 0.5 * g / np.where(s > 0.0, s, 1.0), 0.0),)

        return Var(s, (self,), vjp)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def grad_and_value(f, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and gradient of a scalar function of one flat parameter vector.

    ``f`` receives a leaf ``Var`` wrapping ``x`` and must compose only
    registered operations; a constant (non-Var) result yields a zero gradient.
    """
    x = np.asarray(x, dtype=float)
    leaf = Var(x)
    try:
        out = f(leaf)
    except TypeError as exc:
        raise UnsupportedOpError(f"function used an unregistered operation: {exc}") from exc
    if not isinstance(out, Var):
        return float(out), np.zeros_like(x)
    backward(out)
    g = leaf.grad if leaf.grad is not None else np.zeros_like(x)
    return float(out.value), np.asarray(g, dtype=float).reshape(x.shape)


def stack_rows(rows: Sequence) -> Var:
    """Stack 1-D nodes into a matrix Var, rows in the given order."""
    rows = [as_var(r) for r in rows]
    value = np.stack([r.value for r in rows])

    def vjp(g):
        return tuple(g[i] for i in range(len(rows)))

    return Var(value, tuple(rows), vjp)


def backward(loss: Var) -> None:
    """Accumulate gradients of a scalar ``loss`` into every reachable Var."""
    if not isinstance(loss, Var):
        raise InvalidInputError("backward expects a Var")
    if loss.value.size != 1:
        raise InvalidInputError(f"backward expects a scalar, got shape {loss.value.shape}")

    topo: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=float)
            else:
                parent.grad = parent.grad + g


# -- generic dispatch helpers (work on Var and ndarray alike) ----------------

def tanh(x):
    return x.tanh() if isinstance(x, Var) else np.tanh(x)


def exp(x):
    return x.exp() if isinstance(x, Var) else np.exp(x)


def log(x):
    return x.log() if isinstance(x, Var) else np.log(x)


def sqrt(x):
    return x.sqrt() if isinstance(x, Var) else np.sqrt(x)


def value_of(x) -> np.ndarray:
    """The plain ndarray behind ``x`` whether or not it is a Var."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def scalar_of(x) -> float:
    v = value_of(x)
    return float(v)


def logsumexp(x, axis=None, keepdims=False, weights: np.ndarray | None = None):
    """log(sum(w * exp(x))) with a detached max shift; exact gradient.

    ``weights`` is an optional constant 0/1 (or nonnegative) mask applied
    inside the sum.  Rows whose mask is all-zero are the caller's problem.
    """
    shift = np.max(value_of(x), axis=axis, keepdims=True)
    e = exp(x - shift)
    if weights is not None:
        e = e * weights
    s = e.sum(axis=axis, keepdims=True)
    out = log(s) + shift
    if not keepdims:
        if isinstance(out, Var):
            out = out.reshape(np.squeeze(out.value, axis=axis).shape if axis is not None else ())
        else:
            out = np.squeeze(out, axis=axis) if axis is not None else np.squeeze(out)
    return out


def dot(a, b):
    """Inner product of two 1-D vectors (generic over Var/ndarray)."""
    return (a * b).sum()


def norm2(x):
    """Euclidean norm of a vector (generic over Var/ndarray)."""
    return sqrt((x * x).sum())
