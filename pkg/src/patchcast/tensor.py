"""Minimal dense-tensor autodiff engine.

Float64 numpy arrays wrapped in :class:`Tensor`, with reverse-mode
differentiation driven by an explicit :class:`Tape`. Every operation that
touches a gradient-requiring tensor appends one record (inputs, output, vjp
closure) to the active tape; ``backward`` replays the records in reverse
order exactly once and accumulates gradients into the leaves.

Broadcasting is deliberately restricted: two operands must have identical
shapes, or one must be a scalar, or the smaller shape must be a trailing
suffix of the larger (leading batch dimensions). Anything fancier raises
``ShapeError`` so that every backward rule stays auditable.

Ops are single-threaded per tape; independent tapes may live on separate
threads, which is why the active-tape pointer is thread-local.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class NumericError(ArithmeticError):
    """Non-finite values where an op requires finite input."""


class TapeError(RuntimeError):
    """Backward called in a state the tape cannot honor."""


LAYER_NORM_EPS = 1e-6

_state = threading.local()


def _tls():
    if not hasattr(_state, "tape"):
        _state.tape = Tape()
        _state.grad_enabled = True
    return _state


def active_tape() -> "Tape":
    """The tape new gradient-requiring ops record onto (one per thread)."""
    return _tls().tape


def grad_enabled() -> bool:
    return _tls().grad_enabled


class no_grad:
    """Context manager that suspends tape recording.

    Forward passes made inside the block produce constant tensors
    (requires_grad False) and leave the tape untouched.
    """

    def __enter__(self):
        tls = _tls()
        self._prev = tls.grad_enabled
        tls.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _tls().grad_enabled = self._prev
        return False


class Tensor:
    """A dense float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_produced")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._produced = False  # True once an op on the tape emitted this tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Run reverse-mode accumulation from this (scalar) tensor.

        Consumes the active tape: records are visited exactly once in
        reverse recording order and the tape is cleared afterwards, so a
        second backward needs a fresh forward pass.
        """
        active_tape().backward(self)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / float(other))
        raise TypeError("tensor division is only supported by python scalars")

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


class _Record:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered log of differentiable ops for one reverse sweep."""

    def __init__(self):
        self.records: list[_Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        out._produced = True
        self.records.append(_Record(out, inputs, vjp))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) for every requires_grad leaf on the tape.

        ``loss`` must be a scalar (size-1) tensor. Gradients of ops whose
        output never received a gradient are skipped as zero. The tape is
        cleared on completion (and on error), so it is single-use.
        """
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if not self.records:
            raise TapeError("backward on an empty tape: no ops were recorded")
        try:
            flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
            for rec in reversed(self.records):
                g = flow.pop(id(rec.out), None)
                if g is None:
                    continue
                for t, gt in zip(rec.inputs, rec.vjp(g)):
                    if gt is None:
                        continue
                    if t._produced:
                        acc = flow.get(id(t))
                        flow[id(t)] = gt if acc is None else acc + gt
                    elif t.requires_grad:
                        t.grad = gt.copy() if t.grad is None else t.grad + gt
        finally:
            self.records.clear()


# -- shape plumbing --------------------------------------------------------


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _check_suffix_broadcast(sa: tuple[int, ...], sb: tuple[int, ...], opname: str) -> None:
    if sa == sb:
        return
    if sa == () or sb == ():
        return
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if len(small) < len(big) and big[len(big) - len(small):] == small:
        return
    raise ShapeError(f"{opname}: shapes {sa} and {sb} are neither equal, scalar, nor a trailing suffix")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra))) if extra else g.reshape(shape)


def _unary(x, out_data: np.ndarray, vjp_x: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    x = _coerce(x)
    out = Tensor(out_data)
    if grad_enabled() and (x.requires_grad or x._produced):
        out.requires_grad = True
        active_tape().record(out, (x,), lambda g: (vjp_x(g),))
    return out


def _binary(a, b, opname: str, fwd, vjp_a, vjp_b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_suffix_broadcast(a.data.shape, b.data.shape, opname)
    out = Tensor(fwd(a.data, b.data))
    if grad_enabled() and (a.requires_grad or a._produced or b.requires_grad or b._produced):
        out.requires_grad = True

        def vjp(g):
            return (
                _reduce_to(vjp_a(g, a.data, b.data), a.data.shape),
                _reduce_to(vjp_b(g, a.data, b.data), b.data.shape),
            )

        active_tape().record(out, (a, b), vjp)
    return out


# -- elementwise ops -------------------------------------------------------


def add(a, b) -> Tensor:
    return _binary(a, b, "add", lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, "sub", lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, "mul", lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def neg(x) -> Tensor:
    x = _coerce(x)
    return _unary(x, -x.data, lambda g: -g)


def relu(x) -> Tensor:
    x = _coerce(x)
    out_data = np.maximum(x.data, 0.0)
    return _unary(x, out_data, lambda g: g * (x.data > 0.0))


# -- contractions and reductions -------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with optional leading batch dimensions.

    Both operands must be at least 2-d; the trailing two axes contract as
    usual and leading axes follow the suffix-broadcast rule. Gradients are
    g @ b^T and a^T @ g, summed over broadcast batch axes.
    """
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs 2-d or higher operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} vs {b.data.shape}")
    _check_suffix_broadcast(a.data.shape[:-2], b.data.shape[:-2], "matmul(batch dims)")
    out = Tensor(a.data @ b.data)
    if grad_enabled() and (a.requires_grad or a._produced or b.requires_grad or b._produced):
        out.requires_grad = True

        def vjp(g):
            ga = _reduce_to(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
            gb = _reduce_to(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
            return ga, gb

        active_tape().record(out, (a, b), vjp)
    return out


def tsum(x, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    """Sum over the given axes (all axes when None)."""
    x = _coerce(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, x.data.shape).copy()
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        gg = g if keepdims else np.expand_dims(g, axes)
        return np.broadcast_to(gg, x.data.shape).copy()

    return _unary(x, np.asarray(out_data), vjp)


def sum_exact(x) -> Tensor:
    """Full reduction to a scalar using exactly rounded summation.

    math.fsum makes the result independent of element order, so losses
    reduced through this op are bit-identical under batch permutation.
    """
    x = _coerce(x)
    out_data = np.asarray(math.fsum(x.data.ravel().tolist()))
    return _unary(x, out_data, lambda g: np.full(x.data.shape, float(g)))


# -- shape ops ---------------------------------------------------------------


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = _coerce(x)
    new_shape = tuple(shape)
    out_data = x.data.reshape(new_shape)
    old_shape = x.data.shape
    return _unary(x, out_data, lambda g: g.reshape(old_shape))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = _coerce(x)
    perm = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(perm))
    return _unary(x, x.data.transpose(perm), lambda g: g.transpose(inv))


# -- normalized nonlinearities ----------------------------------------------


def softmax_lastdim(x) -> Tensor:
    """Row-stabilized softmax over the final axis.

    Stable for entries up to +-1e4 via max subtraction. Raises
    ``NumericError`` on non-finite input (an additive mask must therefore
    use a large finite constant, not -inf).
    """
    x = _coerce(x)
    if x.data.shape == () or x.data.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty final axis, got shape {x.data.shape}")
    if not np.isfinite(x.data).all():
        raise NumericError("softmax input contains non-finite values")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return y * (g - dot)

    return _unary(x, y, vjp)


def layer_norm(x, gain, bias) -> Tensor:
    """Normalize the final axis to zero mean, unit variance, then affine.

    Population variance with epsilon 1e-6 inside the square root. ``gain``
    and ``bias`` are 1-d and must match the final axis of ``x``.
    """
    x, gain, bias = _coerce(x), _coerce(gain), _coerce(bias)
    d = x.data.shape[-1] if x.data.ndim else 0
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.data.shape}/{bias.data.shape} do not match final axis of {x.data.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)
    if grad_enabled() and any(t.requires_grad or t._produced for t in (x, gain, bias)):
        out.requires_grad = True

        def vjp(g):
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            dx = inv * (dxhat - m1 - xhat * m2)
            reduce_axes = tuple(range(g.ndim - 1))
            dgain = (g * xhat).sum(axis=reduce_axes) if reduce_axes else g * xhat
            dbias = g.sum(axis=reduce_axes) if reduce_axes else g
            return dx, dgain, dbias

        active_tape().record(out, (x, gain, bias), vjp)
    return out
