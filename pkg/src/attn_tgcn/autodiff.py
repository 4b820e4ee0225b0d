"""Dense float64 matrices with a reverse-mode tape.

Every value is a 2-D ``numpy`` array wrapped in a :class:`Var` that remembers
how it was produced.  Calling :meth:`Tape.backward` on a 1x1 result walks the
record in reverse creation order and accumulates exact gradients into every
leaf.  :func:`finite_diff_grad` is the independent central-difference oracle
used to check it.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .exceptions import DomainError, NumericError, ShapeError

__all__ = [
    "Tape",
    "Var",
    "matmul",
    "add",
    "subtract",
    "multiply",
    "scale",
    "one_minus",
    "sigmoid",
    "tanh",
    "relu",
    "elementwise",
    "add_row",
    "mul_col",
    "column",
    "transpose",
    "reshape",
    "concat_cols",
    "concat_rows",
    "softmax_rows",
    "softmax_vec",
    "log_clamped",
    "sum_all",
    "finite_diff_grad",
    "relative_error",
]


def _as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected a matrix, got array with shape {arr.shape}")
    return arr


class Var:
    """One recorded value on a :class:`Tape`."""

    __slots__ = ("value", "tape", "index", "parents", "backward_fn", "name", "requires_grad")

    def __init__(self, value, tape, parents=(), backward_fn=None, name=None, requires_grad=True):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.requires_grad = requires_grad
        self.index = tape._append(self)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"


class Tape:
    """Ordered record of primitive applications.

    A tape belongs to a single thread.  Nodes are appended as operations run,
    so operands always precede their results and the reverse sweep in
    :meth:`backward` is a valid topological order.
    """

    def __init__(self):
        self.nodes: list[Var] = []

    def _append(self, var: Var) -> int:
        self.nodes.append(var)
        return len(self.nodes) - 1

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> Var:
        """Register a differentiable input (typically a parameter)."""
        return Var(_as_matrix(value), self, name=name)

    def constant(self, value) -> Var:
        """Register an input that never receives a gradient."""
        return Var(_as_matrix(value), self, requires_grad=False)

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Reverse sweep from ``loss``.

        Returns gradients of every *named* leaf, keyed by name.  Leaves the loss
        does not depend on get zeros.  The gradient of any other recorded value
        can be read from the returned mapping via :meth:`grad_of` afterwards.
        """
        if loss.tape is not self:
            raise DomainError("loss was recorded on a different tape")
        if loss.value.shape != (1, 1):
            raise DomainError(f"loss must be a scalar (1x1), got shape {loss.value.shape}")

        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.index] = np.ones((1, 1))
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads[node.index]
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if grads[parent.index] is None:
                    grads[parent.index] = pg
                else:
                    grads[parent.index] = grads[parent.index] + pg
        self._grads = grads

        out = {}
        for node in self.nodes:
            if node.name is not None and node.parents == () and node.requires_grad:
                g = grads[node.index]
                out[node.name] = np.zeros_like(node.value) if g is None else g
        return out

    def grad_of(self, var: Var) -> np.ndarray:
        g = self._grads[var.index]
        return np.zeros_like(var.value) if g is None else g


def _record(value, parents, backward_fn) -> Var:
    tape = parents[0].tape
    for p in parents[1:]:
        if p.tape is not tape:
            raise DomainError("operands recorded on different tapes")
    needs = any(p.requires_grad for p in parents)
    return Var(value, tape, parents, backward_fn if needs else None, requires_grad=needs)


def _same_shape(a: Var, b: Var, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


# --- linear algebra ---------------------------------------------------------


def matmul(a: Var, b: Var) -> Var:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.value.shape} by {b.value.shape}")
    av, bv = a.value, b.value
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Var) -> Var:
    return _record(a.value.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Var, rows: int, cols: int) -> Var:
    shape = a.value.shape
    if rows * cols != shape[0] * shape[1]:
        raise ShapeError(f"reshape: cannot view {shape} as ({rows}, {cols})")
    return _record(a.value.reshape(rows, cols), (a,), lambda g: (g.reshape(shape),))


def concat_cols(a: Var, b: Var) -> Var:
    if a.value.shape[0] != b.value.shape[0]:
        raise ShapeError(f"concat_cols: row counts differ, {a.value.shape} vs {b.value.shape}")
    p = a.value.shape[1]
    return _record(
        np.concatenate([a.value, b.value], axis=1), (a, b), lambda g: (g[:, :p], g[:, p:])
    )


def concat_rows(parts: list[Var]) -> Var:
    if not parts:
        raise DomainError("concat_rows needs at least one operand")
    cols = parts[0].value.shape[1]
    for p in parts:
        if p.value.shape[1] != cols:
            raise ShapeError(f"concat_rows: column counts differ, {parts[0].value.shape} vs {p.value.shape}")
    bounds = np.cumsum([0] + [p.value.shape[0] for p in parts])

    def backward(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _record(np.concatenate([p.value for p in parts], axis=0), tuple(parts), backward)


def column(a: Var, j: int) -> Var:
    """Column ``j`` of ``a`` as an m x 1 matrix."""
    m, n = a.value.shape
    if not 0 <= j < n:
        raise ShapeError(f"column index {j} out of range for shape {a.value.shape}")

    def backward(g):
        full = np.zeros((m, n))
        full[:, j] = g[:, 0]
        return (full,)

    return _record(a.value[:, j : j + 1].copy(), (a,), backward)


# --- elementwise ------------------------------------------------------------


def add(a: Var, b: Var) -> Var:
    _same_shape(a, b, "add")
    return _record(a.value + b.value, (a, b), lambda g: (g, g))


def subtract(a: Var, b: Var) -> Var:
    _same_shape(a, b, "subtract")
    return _record(a.value - b.value, (a, b), lambda g: (g, -g))


def multiply(a: Var, b: Var) -> Var:
    _same_shape(a, b, "multiply")
    av, bv = a.value, b.value
    return _record(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Var, c: float) -> Var:
    c = float(c)
    return _record(a.value * c, (a,), lambda g: (g * c,))


def one_minus(a: Var) -> Var:
    return _record(1.0 - a.value, (a,), lambda g: (-g,))


def sigmoid(a: Var) -> Var:
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Var) -> Var:
    t = np.tanh(a.value)
    return _record(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Var) -> Var:
    step = (a.value > 0).astype(np.float64)
    return _record(a.value * step, (a,), lambda g: (g * step,))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}
_BINARY = {"add": add, "subtract": subtract, "multiply": multiply}


def elementwise(op: str, *operands: Var, c: float | None = None) -> Var:
    """Dispatch an entrywise primitive by name."""
    if op in _UNARY:
        (a,) = operands
        return _UNARY[op](a)
    if op in _BINARY:
        a, b = operands
        return _BINARY[op](a, b)
    if op in ("scale", "scale-by-constant"):
        (a,) = operands
        if c is None:
            raise DomainError("scale needs a constant c")
        return scale(a, c)
    raise DomainError(f"unknown elementwise op {op!r}")


def add_row(a: Var, row: Var) -> Var:
    """Add a 1 x n row (a bias) to every row of an m x n matrix."""
    if row.value.shape != (1, a.value.shape[1]):
        raise ShapeError(f"add_row: bias {row.value.shape} does not fit {a.value.shape}")
    return _record(a.value + row.value, (a, row), lambda g: (g, g.sum(axis=0, keepdims=True)))


def mul_col(a: Var, col: Var) -> Var:
    """Scale row i of an m x n matrix by entry i of an m x 1 column."""
    if col.value.shape != (a.value.shape[0], 1):
        raise ShapeError(f"mul_col: column {col.value.shape} does not fit {a.value.shape}")
    av, cv = a.value, col.value
    return _record(av * cv, (a, col), lambda g: (g * cv, (g * av).sum(axis=1, keepdims=True)))


# --- reductions and probability ---------------------------------------------


def softmax_vec(v) -> np.ndarray:
    """Max-shifted softmax of a 1-D vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"softmax_vec expects a vector, got shape {v.shape}")
    if v.size == 0:
        raise DomainError("softmax of an empty vector")
    e = np.exp(v - v.max())
    return e / e.sum()


def _softmax_rows_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(a: Var) -> Var:
    """Apply :func:`softmax_vec` to each row independently."""
    if a.value.shape[1] == 0:
        raise DomainError("softmax of an empty vector")
    s = _softmax_rows_np(a.value)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _record(s, (a,), backward)


def log_clamped(a: Var, floor: float = 1e-12) -> Var:
    """``log(max(a, floor))``; clamped entries pass no gradient."""
    x = a.value
    live = x > floor
    safe = np.where(live, x, floor)
    return _record(np.log(safe), (a,), lambda g: (np.where(live, g / safe, 0.0),))


def sum_all(a: Var) -> Var:
    shape = a.value.shape
    return _record(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


# --- oracle -----------------------------------------------------------------


def finite_diff_grad(
    f: Callable[[dict[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    dtype=np.float64,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``f`` at ``params``.

    ``f`` receives a dict of arrays shaped like ``params`` (held in ``dtype``)
    and must return a finite scalar.  The input arrays are never modified.
    Gradients are returned as float64.
    """
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    eps = dtype(eps)
    work = {k: np.array(v, dtype=dtype, copy=True) for k, v in params.items()}
    grads = {}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(work)
            flat[i] = orig - eps
            lo = f(work)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                idx = [int(j) for j in np.unravel_index(i, arr.shape)]
                raise NumericError(f"non-finite objective when perturbing {name}{idx}")
            gflat[i] = (hi - lo) / (2 * eps)
        grads[name] = g.astype(np.float64)
    return grads


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    """Entrywise ``|a - b| / max(floor, |a| + |b|)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))
