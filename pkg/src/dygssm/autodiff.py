"""Dense 2-D tensors with a define-by-run reverse-mode tape.

Every primitive computes its forward value with numpy (float64) and, when
any input participates in differentiation, appends a record holding a
local gradient rule to the active :class:`Tape`.  :func:`backward` replays
the tape in exact reverse recording order and then clears it.

Only row/column broadcasting of 1-wide operands is supported.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, NumericError, ShapeError

__all__ = [
    "Tensor", "Tape", "current_tape", "no_grad", "as_tensor",
    "add", "sub", "mul_elem", "scale", "neg", "matmul", "spmm", "transpose",
    "concat_cols", "take_rows", "sum_rows", "mean_scalar", "sigmoid", "tanh",
    "relu", "log", "clamp", "softmax_rows", "detach", "backward", "grad_check",
]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return detach(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul_elem(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    rule: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered log of differentiable operations.

    Used as a context manager it becomes the active tape for every op
    executed inside the block; nested tapes are independent.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule) -> None:
        self.records.append(_Record(out, inputs, rule))

    def clear(self) -> None:
        self.records.clear()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)


_TAPES: list[Tape] = [Tape()]
_GRAD_ENABLED = [True]


def current_tape() -> Tape:
    return _TAPES[-1]


@contextlib.contextmanager
def no_grad():
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], rule) -> Tensor:
    track = _GRAD_ENABLED[-1] and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = track
    out.name = None
    if track:
        current_tape().record(out, inputs, rule)
    return out


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, int]:
    shape = []
    for da, db in zip(a.shape, b.shape):
        if da == db or db == 1:
            shape.append(da)
        elif da == 1:
            shape.append(db)
        else:
            raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    return tuple(shape)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul_elem(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul_elem", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def neg(a) -> Tensor:
    return scale(a, -1.0)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    if np.any(x <= 0):
        raise NumericError("log of non-positive value")
    return _make(np.log(x), (a,), lambda g: (g / x,))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; gradient is zero where clipping was active."""
    a = as_tensor(a)
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _make(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def detach(a) -> Tensor:
    return Tensor(as_tensor(a).data)


# -------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def spmm(m, b) -> Tensor:
    """Constant (possibly sparse) matrix times tensor."""
    b = as_tensor(b)
    if m.shape[1] != b.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {m.shape} and {b.shape}")
    out = m @ b.data
    out = np.asarray(out.toarray() if sp.issparse(out) else out, dtype=np.float64)
    mt = m.T
    return _make(out, (b,), lambda g: (np.asarray(mt @ g),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def concat_cols(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts differ, {a.shape} and {b.shape}")
    k = a.shape[1]
    return _make(np.concatenate([a.data, b.data], axis=1), (a, b),
                 lambda g: (g[:, :k], g[:, k:]))


def take_rows(a, idx) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def rule(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), rule)


# ------------------------------------------------------------------ reductions


def sum_rows(a) -> Tensor:
    """Row sums as an (n, 1) column."""
    a = as_tensor(a)
    cols = a.shape[1]
    return _make(a.data.sum(axis=1, keepdims=True), (a,),
                 lambda g: (np.repeat(g, cols, axis=1),))


def mean_scalar(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.size
    if n == 0:
        raise ContractError("mean of an empty tensor")
    return _make(np.array([[a.data.mean()]]), (a,),
                 lambda g: (np.full(shape, g[0, 0] / n),))


def softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (a,), rule)


# -------------------------------------------------------------------- backward


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate ``.grad`` of everything ``loss`` depends on, then clear the tape.

    Gradients accumulate into existing ``.grad`` arrays.
    """
    tape = tape or current_tape()
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    seed = np.ones((1, 1))
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for rec in reversed(tape.records):
        g = rec.out.grad
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.rule(g)):
            if gi is None or not inp.requires_grad:
                continue
            inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
    tape.clear()


def _param_list(params) -> list[Tensor]:
    if params is None:
        return []
    if hasattr(params, "tensors"):
        params = params.tensors()
    if isinstance(params, dict):
        params = params.values()
    return list(params)


def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor] | object,
               h: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` rebuilds the forward pass from the current parameter values each
    call.  Relative error of an entry is ``|a - n| / max(|a|, |n|, floor)``;
    the floor keeps exactly-zero gradients from dividing by zero.
    """
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    plist = _param_list(params)
    if not plist:
        return 0.0
    for p in plist:
        p.grad = None
    with Tape() as tape:
        loss = f()
        if not np.isfinite(loss.data).all():
            raise NumericError("non-finite loss in grad_check")
        backward(loss, tape)
    worst = 0.0
    with no_grad():
        for p in plist:
            analytic = np.zeros(p.shape) if p.grad is None else p.grad
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = f().item()
                flat[i] = orig - h
                down = f().item()
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NumericError("non-finite loss in grad_check")
                numeric = (up - down) / (2 * h)
                a = analytic.reshape(-1)[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, err)
    return worst
