"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable function in this module appends one node to the active
:class:`Tape`.  :func:`backward` replays that tape in reverse, so the order in
which gradients are accumulated is fixed by the order of the forward pass.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as t:
    ...     y = total(mul(x, x))
    ...     backward(y)
    >>> x.grad
    array([2., 4.])
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import DimensionError, DomainError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "no_grad",
    "current_tape",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "neg",
    "relu",
    "exp",
    "log",
    "sqrt",
    "clamp_min",
    "xlogx",
    "add_row",
    "total",
    "mean",
    "row_sum",
    "softmax",
    "log_softmax",
    "sq_euclidean_rows",
    "normalize_rows",
    "reshape",
    "take_rows",
    "slice_rows",
    "pick",
    "concat_rows",
    "gradient_reversal",
    "detach",
]


class Tensor:
    """A dense array of 64-bit floats, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.is_leaf = True

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.broadcast_to(np.asarray(value, dtype=np.float64), like.shape))


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: tuple, backward_fn: Callable):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of differentiable operations executed in this thread.

    Use as a context manager to make it the active tape; nested tapes are
    allowed and restore the previous one on exit.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()


class _State(threading.local):
    def __init__(self):
        self.stack: list = [Tape()]
        self.enabled = True


_state = _State()


def current_tape() -> Tape:
    return _state.stack[-1]


@contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them; outputs never require grad."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _emit(data: np.ndarray, inputs: tuple, backward_fn: Callable) -> Tensor:
    track = _state.enabled and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    data = np.asarray(data, dtype=np.float64)
    data.flags.writeable = False
    out.data = data
    out.requires_grad = track
    out.grad = None
    out.name = None
    out.is_leaf = not track
    if track:
        current_tape().record(_Node(out, inputs, backward_fn))
    return out


def backward(loss: Tensor, tape: Optional[Tape] = None, retain: bool = False) -> None:
    """Populate ``.grad`` on every tracked tensor that ``loss`` depends on.

    The tape is cleared afterwards unless ``retain`` is set.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = tape if tape is not None else current_tape()
    if not loss.requires_grad:
        raise ShapeError("loss does not depend on any tensor that requires grad")
    if not loss.is_leaf and not any(node.out is loss for node in reversed(tape.nodes)):
        raise ShapeError("loss was not recorded on the active tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    seen: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.out))
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            seen[key] = inp
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
    for key, t in seen.items():
        t.grad = np.array(grads[key], dtype=np.float64).reshape(t.shape)
    for node in tape.nodes:
        for inp in node.inputs:
            if inp.requires_grad and id(inp) not in seen:
                inp.grad = np.zeros(inp.shape)
    if not retain:
        tape.clear()


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    return _emit(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _emit(A * B, (a, b), lambda g: (g * B, g * A))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)
    A, B = a.data, b.data
    if np.any(B == 0):
        raise DomainError(f"div: zero divisor at index {_first(B == 0)}")
    return _emit(A / B, (a, b), lambda g: (g / B, -g * A / (B * B)))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(x.data * c, (x,), lambda g: (g * c,))


def neg(x: Tensor) -> Tensor:
    return _emit(-x.data, (x,), lambda g: (-g,))


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return _emit(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit(y, (x,), lambda g: (g * y,))


def _first(mask: np.ndarray) -> tuple:
    return tuple(int(i) for i in np.argwhere(mask)[0])


def log(x: Tensor) -> Tensor:
    X = x.data
    bad = ~(X > 0)
    if bad.any():
        idx = _first(bad)
        raise DomainError(f"log: non-positive input {X[idx]!r} at index {idx}")
    return _emit(np.log(X), (x,), lambda g: (g / X,))


def sqrt(x: Tensor) -> Tensor:
    """Square root; the derivative at exactly 0 is taken as 0."""
    X = x.data
    if np.any(X < 0):
        idx = _first(X < 0)
        raise DomainError(f"sqrt: negative input {X[idx]!r} at index {idx}")
    y = np.sqrt(X)
    pos = y > 0
    dy = np.divide(0.5, y, out=np.zeros_like(y), where=pos)
    return _emit(y, (x,), lambda g: (g * dy,))


def clamp_min(x: Tensor, lo: float) -> Tensor:
    keep = x.data >= lo
    return _emit(np.where(keep, x.data, lo), (x,), lambda g: (g * keep,))


def xlogx(x: Tensor) -> Tensor:
    """Elementwise x*log(x) with 0*log(0) = 0; inputs must be nonnegative."""
    X = x.data
    if np.any(X < 0):
        idx = _first(X < 0)
        raise DomainError(f"xlogx: negative input {X[idx]!r} at index {idx}")
    pos = X > 0
    lx = np.log(np.where(pos, X, 1.0))
    y = np.where(pos, X * lx, 0.0)
    return _emit(y, (x,), lambda g: (g * np.where(pos, lx + 1.0, 0.0),))


def add_row(x: Tensor, row: Tensor) -> Tensor:
    """Add a length-n vector to every row of a B x n matrix (bias add)."""
    if x.data.ndim != 2 or row.data.ndim != 1 or x.shape[1] != row.shape[0]:
        raise DimensionError(f"add_row: cannot add {row.shape} to rows of {x.shape}")
    return _emit(x.data + row.data, (x, row), lambda g: (g, g.sum(axis=0)))


def total(x: Tensor) -> Tensor:
    shape = x.shape
    return _emit(np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, shape),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape
    return _emit(np.sum(x.data) / n, (x,), lambda g: (np.broadcast_to(g / n, shape),))


def row_sum(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"row_sum: expected a matrix, got {x.shape}")
    return _emit(x.data.sum(axis=1), (x,), lambda g: (np.repeat(g[:, None], x.shape[1], axis=1),))


def _check_finite(op: str, X: np.ndarray) -> None:
    if not np.all(np.isfinite(X)):
        idx = _first(~np.isfinite(X))
        raise NumericError(f"{op}: non-finite input {X[idx]!r} at index {idx}")


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, computed after subtracting the row max."""
    X = x.data
    if X.ndim not in (1, 2):
        raise DimensionError(f"softmax: expected a vector or matrix, got {x.shape}")
    _check_finite("softmax", X)
    z = np.exp(X - X.max(axis=-1, keepdims=True))
    y = z / z.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (x,), bw)


def log_softmax(x: Tensor) -> Tensor:
    X = x.data
    if X.ndim not in (1, 2):
        raise DimensionError(f"log_softmax: expected a vector or matrix, got {x.shape}")
    _check_finite("log_softmax", X)
    shifted = X - X.max(axis=-1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(y)
    return _emit(y, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def sq_euclidean_rows(a: Tensor, b: Tensor) -> Tensor:
    """Matrix of squared distances: entry (i, j) is ||a_i - b_j||^2."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"sq_euclidean_rows: feature widths differ, {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    diff = A[:, None, :] - B[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)

    def bw(g):
        gd = 2.0 * g[:, :, None] * diff
        return gd.sum(axis=1), -gd.sum(axis=0)

    return _emit(d, (a, b), bw)


def normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row by (its L2 norm + eps)."""
    X = x.data
    if X.ndim != 2:
        raise DimensionError(f"normalize_rows: expected a matrix, got {x.shape}")
    n = np.sqrt((X * X).sum(axis=1, keepdims=True))
    d = n + eps
    y = X / d

    def bw(g):
        # d/dx of x/(|x|+eps) = I/d - x x^T / (|x| d^2)
        safe = np.where(n > 0, n, 1.0)
        proj = (g * X).sum(axis=1, keepdims=True)
        return (g / d - X * proj / (safe * d * d) * (n > 0),)

    return _emit(y, (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {src} as {shape}") from exc
    return _emit(y, (x,), lambda g: (g.reshape(src),))


def take_rows(x: Tensor, idx: Sequence[int]) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    X = x.data
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _emit(X[idx], (x,), bw)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows start..stop-1 of x."""
    if not 0 <= start < stop <= x.shape[0]:
        raise DimensionError(f"slice_rows: bad range [{start}, {stop}) for {x.shape[0]} rows")
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _emit(x.data[start:stop], (x,), bw)


def pick(x: Tensor, cols: Sequence[int]) -> Tensor:
    """Select x[i, cols[i]] for each row i."""
    cols = np.asarray(cols, dtype=np.intp)
    if x.data.ndim != 2 or cols.shape != (x.shape[0],):
        raise DimensionError(f"pick: need one column per row of {x.shape}, got {cols.shape}")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        out[rows, cols] = g
        return (out,)

    return _emit(x.data[rows, cols], (x,), bw)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    widths = {p.shape[1:] for p in parts}
    if len(widths) != 1:
        raise DimensionError(f"concat_rows: trailing shapes differ, {sorted(widths)}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _emit(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bw)


def gradient_reversal(x: Tensor, coeff: float = 1.0) -> Tensor:
    """Identity on the forward pass; multiplies the gradient by -coeff."""
    if coeff < 0:
        raise ValueError(f"gradient_reversal: coeff must be nonnegative, got {coeff}")
    c = -float(coeff)
    return _emit(x.data, (x,), lambda g: (g * c,))


def detach(x: Tensor) -> Tensor:
    return Tensor(x.data)
