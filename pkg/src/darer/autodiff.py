"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every learnable operation in the model runs through the ops in this module.
Recording happens define-by-run: ops executed while a Tape is active append
a backward closure; backward() replays the closures in exact reverse
execution order, accumulating gradients additively. Tensors created with no
active tape are plain values.
"""

from __future__ import annotations

import numpy as np

_TAPE_STACK: list = []  # innermost entry wins; None marks a no_grad region
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf detection after every forward op (slow, loud)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def _active_tape():
    if _TAPE_STACK and _TAPE_STACK[-1] is not None:
        return _TAPE_STACK[-1]
    return None


class Tape:
    """Ordered record of executed ops; context manager activates it."""

    def __init__(self):
        self._entries = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._entries)


class no_grad:
    """Context manager that suspends recording inside an active tape."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False


class Tensor:
    """Row-major float64 array, optionally carrying a same-shape grad buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None   # allocated on first accumulation; see parameter()
        self._tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def parameter(data) -> Tensor:
    """Leaf tensor tracked by the optimizer (requires_grad, zeroed grad buffer)."""
    t = Tensor(data, requires_grad=True)
    t.grad = np.zeros_like(t.data)
    return t


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make_output(data, inputs, name: str) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{name} produced non-finite values")
    requires = _active_tape() is not None and any(t.requires_grad for t in inputs)
    return Tensor(data, requires_grad=requires)


def _record(out: Tensor, backward_fn) -> None:
    tape = _active_tape()
    if out.requires_grad and tape is not None:
        tape._entries.append((out, backward_fn))
        out._tape = tape


def _accum(t: Tensor, grad) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _grad_buffer(t: Tensor) -> np.ndarray:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    return t.grad


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- elementwise ---

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _make_output(a.data + b.data, (a, b), "add")

    def backward():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad, b.data.shape))

    _record(out, backward)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _make_output(a.data - b.data, (a, b), "sub")

    def backward():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            _accum(b, -_unbroadcast(out.grad, b.data.shape))

    _record(out, backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _make_output(a.data * b.data, (a, b), "mul")

    def backward():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))

    _record(out, backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = 1.0 / (1.0 + np.exp(-x.data))
    out = _make_output(data, (x,), "sigmoid")

    def backward():
        if x.requires_grad:
            _accum(x, out.grad * data * (1.0 - data))

    _record(out, backward)
    return out


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.tanh(x.data)
    out = _make_output(data, (x,), "tanh")

    def backward():
        if x.requires_grad:
            _accum(x, out.grad * (1.0 - data * data))

    _record(out, backward)
    return out


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = _make_output(np.maximum(x.data, 0.0), (x,), "relu")

    def backward():
        if x.requires_grad:
            _accum(x, out.grad * (x.data > 0.0))

    _record(out, backward)
    return out


def log_clamped(x: Tensor, eps: float = 1e-12) -> Tensor:
    """log(max(x, eps)); gradient is zero on the clamped region."""
    x = _as_tensor(x)
    clamped = np.maximum(x.data, eps)
    out = _make_output(np.log(clamped), (x,), "log_clamped")

    def backward():
        if x.requires_grad:
            _accum(x, out.grad * (x.data > eps) / clamped)

    _record(out, backward)
    return out


# --- linear algebra ---

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul dimension mismatch: {a.data.shape} x {b.data.shape}"
        )
    out = _make_output(a.data @ b.data, (a, b), "matmul")

    def backward():
        if a.requires_grad:
            _accum(a, out.grad @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ out.grad)

    _record(out, backward)
    return out


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (a vector, or each row of a matrix)."""
    x = _as_tensor(x)
    if x.data.ndim not in (1, 2) or x.data.shape[-1] == 0:
        raise ValueError(f"softmax needs a non-empty vector or matrix, got shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)
    out = _make_output(data, (x,), "softmax")

    def backward():
        if x.requires_grad:
            # dx_j = y_j * (g_j - sum_k g_k y_k), rowwise
            dot = (out.grad * data).sum(axis=-1, keepdims=True)
            _accum(x, data * (out.grad - dot))

    _record(out, backward)
    return out


def max_pool_rows(h: Tensor) -> Tensor:
    """Columnwise max of an LxD matrix; gradient routes to the first argmax row."""
    h = _as_tensor(h)
    if h.data.ndim != 2 or h.data.shape[0] == 0:
        raise ValueError(f"max_pool_rows needs a non-empty LxD matrix, got shape {h.data.shape}")
    idx = h.data.argmax(axis=0)  # first maximal row on ties
    out = _make_output(h.data[idx, np.arange(h.data.shape[1])], (h,), "max_pool_rows")

    def backward():
        if h.requires_grad:
            np.add.at(_grad_buffer(h), (idx, np.arange(h.data.shape[1])), out.grad)

    _record(out, backward)
    return out


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; on ties the gradient routes to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"maximum shape mismatch: {a.data.shape} vs {b.data.shape}")
    take_a = a.data >= b.data
    out = _make_output(np.where(take_a, a.data, b.data), (a, b), "maximum")

    def backward():
        if a.requires_grad:
            _accum(a, out.grad * take_a)
        if b.requires_grad:
            _accum(b, out.grad * ~take_a)

    _record(out, backward)
    return out


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = _make_output(x.data.sum(), (x,), "sum_all")

    def backward():
        if x.requires_grad:
            _accum(x, out.grad)

    _record(out, backward)
    return out


# --- shape ops ---

def vstack(parts) -> Tensor:
    """Stack vectors or matrices along a new/extended leading row axis."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("vstack of zero tensors")
    out = _make_output(np.vstack([p.data for p in parts]), tuple(parts), "vstack")
    counts = [1 if p.data.ndim == 1 else p.data.shape[0] for p in parts]

    def backward():
        offset = 0
        for p, c in zip(parts, counts):
            if p.requires_grad:
                g = out.grad[offset:offset + c]
                _accum(p, g[0] if p.data.ndim == 1 else g)
            offset += c

    _record(out, backward)
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ValueError(f"concat_cols dimension mismatch: {a.data.shape} vs {b.data.shape}")
    out = _make_output(np.hstack([a.data, b.data]), (a, b), "concat_cols")
    split = a.data.shape[1]

    def backward():
        if a.requires_grad:
            _accum(a, out.grad[:, :split])
        if b.requires_grad:
            _accum(b, out.grad[:, split:])

    _record(out, backward)
    return out


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2 or not (0 <= start <= stop <= x.data.shape[0]):
        raise ValueError(f"rows[{start}:{stop}] invalid for shape {x.data.shape}")
    out = _make_output(x.data[start:stop].copy(), (x,), "rows")

    def backward():
        if x.requires_grad:
            _grad_buffer(x)[start:stop] += out.grad

    _record(out, backward)
    return out


def cols(x: Tensor, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2 or not (0 <= start <= stop <= x.data.shape[1]):
        raise ValueError(f"cols[{start}:{stop}] invalid for shape {x.data.shape}")
    out = _make_output(x.data[:, start:stop].copy(), (x,), "cols")

    def backward():
        if x.requires_grad:
            _grad_buffer(x)[:, start:stop] += out.grad

    _record(out, backward)
    return out


def take_rows(table: Tensor, indices) -> Tensor:
    """Row gather (embedding lookup); duplicate indices accumulate gradient."""
    table = _as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"take_rows needs a flat index list, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(
            f"row index out of range for table with {table.data.shape[0]} rows"
        )
    out = _make_output(table.data[idx], (table,), "take_rows")

    def backward():
        if table.requires_grad:
            np.add.at(_grad_buffer(table), idx, out.grad)

    _record(out, backward)
    return out


def pick_per_row(x: Tensor, columns) -> Tensor:
    """out[i] = x[i, columns[i]] for an NxC matrix."""
    x = _as_tensor(x)
    col = np.asarray(columns, dtype=np.int64)
    if x.data.ndim != 2 or col.shape != (x.data.shape[0],):
        raise ValueError(f"pick_per_row mismatch: x {x.data.shape}, columns {col.shape}")
    if col.size and (col.min() < 0 or col.max() >= x.data.shape[1]):
        raise IndexError(f"column index out of range for {x.data.shape[1]} classes")
    rng = np.arange(x.data.shape[0])
    out = _make_output(x.data[rng, col], (x,), "pick_per_row")

    def backward():
        if x.requires_grad:
            np.add.at(_grad_buffer(x), (rng, col), out.grad)

    _record(out, backward)
    return out


# --- backward & verification ---

def backward(loss: Tensor) -> None:
    """Populate grads of everything reachable from a scalar loss; clears the tape."""
    if loss.data.shape != ():
        raise ValueError(f"backward needs a scalar loss, got rank-{loss.data.ndim} shape {loss.data.shape}")
    tape = _active_tape()
    if tape is None or loss._tape is not tape:
        raise RuntimeError("loss was not recorded on the active tape")
    _accum(loss, 1.0)
    for out, fn in reversed(tape._entries):
        if out.grad is not None:
            fn()
    tape._entries.clear()


def finite_diff_check(f, params, step: float = 1e-5) -> float:
    """Max relative error between analytic grads of f() and central differences.

    f must be a deterministic scalar function of the given parameter tensors;
    two forward evaluations are compared bitwise and a mismatch is rejected.
    Error per entry is |analytic - numeric| / max(1, |numeric|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    with no_grad():
        first = float(f().data)
        second = float(f().data)
    if first != second:
        raise RuntimeError(
            "finite_diff_check rejected: two forward passes differ "
            f"({first!r} vs {second!r}); disable stochastic layers"
        )

    for p in params:
        p.zero_grad()
    with Tape():
        backward(f())
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for p, grad in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + step
                f_plus = float(f().data)
                flat[i] = saved - step
                f_minus = float(f().data)
                flat[i] = saved
                numeric = (f_plus - f_minus) / (2.0 * step)
                err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
    return worst
