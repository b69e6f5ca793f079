"""Reverse-mode automatic differentiation on dense float64 arrays.

A :class:`Tensor` wraps a contiguous row-major ``numpy`` array. Every
operation whose inputs require gradients appends a record to the active
:class:`Tape` (a Wengert list); :func:`Tape.backward` replays the records
once, in reverse recording order, accumulating gradients additively into
every reachable tensor with ``requires_grad=True``.

Tapes are thread-local. One tape belongs to one training context; use
:func:`fresh_tape` per optimization step and :func:`no_grad` for pure
evaluation passes.
"""

from __future__ import annotations

import contextlib
import threading
import warnings

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class NumericFaultError(ArithmeticError):
    """A non-finite value appeared where the contract requires finite math."""


class TapeError(RuntimeError):
    """Tape misuse: backward on a non-scalar, double backward, wrong tape."""


class NonDifferentiablePointWarning(UserWarning):
    """grad_check hit a kink (one-sided derivatives disagree)."""


_STATE = threading.local()


def _state():
    if not hasattr(_STATE, "tapes"):
        _STATE.tapes = [Tape()]
        _STATE.grad_enabled = True
        _STATE.debug = False
    return _STATE


def current_tape() -> "Tape":
    """The tape new operations record onto."""
    return _state().tapes[-1]


@contextlib.contextmanager
def fresh_tape():
    """Install a new empty tape for the duration of the context."""
    st = _state()
    tape = Tape()
    st.tapes.append(tape)
    try:
        yield tape
    finally:
        st.tapes.pop()


@contextlib.contextmanager
def no_grad():
    """Disable recording; outputs created inside never require gradients."""
    st = _state()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


def grad_enabled() -> bool:
    return _state().grad_enabled


def set_debug(flag: bool) -> None:
    """In debug mode every op output is checked for NaN/Inf."""
    _state().debug = flag


class _Record:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered operation log; recording order is topological order."""

    def __init__(self):
        self._records: list[_Record] = []
        self._spent = False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, rec: _Record) -> None:
        self._records.append(rec)

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(tensor) into every requires_grad tensor.

        ``loss`` must be a scalar produced by operations recorded on this
        tape. Each record is visited exactly once, in reverse order;
        gradients from multiple uses of a tensor add up.
        """
        if self._spent:
            raise TapeError("backward already ran on this tape; reset it first")
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if getattr(loss, "_tape_id", None) != id(self):
            raise TapeError("loss was not produced by operations on this tape")
        self._spent = True
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self._records):
            g_out = rec.output.grad
            if g_out is None:
                continue
            grads = rec.backward(g_out)
            for tensor, g in zip(rec.inputs, grads):
                if g is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
                tensor.grad += g

    def reset(self) -> None:
        """Drop all records (releasing intermediate buffers) and re-arm."""
        self._records.clear()
        self._spent = False


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_tape_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape_id: int | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeMismatchError(f"item() needs a scalar, got shape {self.shape}")

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def detach(self) -> "Tensor":
        """Same data, no gradient history."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __neg__(self):
        return smul(self, -1.0)

    def __sub__(self, other):
        return add(self, smul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), smul(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, 1.0 / float(other))
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)

    # -- shape / reductions ---------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, np.sum, lambda cnt: 1.0)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, np.mean, lambda cnt: 1.0 / cnt)

    def backward(self) -> None:
        """Run backward on the currently active tape."""
        current_tape().backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray, backward) -> Tensor:
    st = _state()
    if st.debug and not np.all(np.isfinite(out_data)):
        raise NumericFaultError(f"{op}: non-finite values in output")
    rg = st.grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=rg)
    if rg:
        tape = st.tapes[-1]
        out._tape_id = id(tape)
        tape.record(_Record(op, inputs, out, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcast during the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting (also the positional add)."""
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatchError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _apply(
        "add", (a, b), out,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with broadcasting."""
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeMismatchError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    ad, bd = a.data, b.data
    return _apply(
        "mul", (a, b), out,
        lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise quotient with broadcasting."""
    try:
        out = a.data / b.data
    except ValueError:
        raise ShapeMismatchError(f"div: shapes {a.shape} and {b.shape} do not broadcast")
    ad, bd = a.data, b.data
    return _apply(
        "div", (a, b), out,
        lambda g: (
            _unbroadcast(g / bd, a.shape),
            _unbroadcast(-g * ad / (bd * bd), b.shape),
        ),
    )


def smul(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    c = float(c)
    return _apply("smul", (a,), a.data * c, lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(f"matmul: expected 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _apply(
        "matmul", (a, b), ad @ bd,
        lambda g: (g @ bd.T, ad.T @ g),
    )


def conv1d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Valid (no padding) 1-D convolution.

    ``x`` is (C_in, L), ``w`` is (C_out, C_in, K); output is (C_out, T)
    with T = floor((L - K) / stride) + 1. Bias, if any, is a separate add.
    """
    if x.ndim != 2 or w.ndim != 3:
        raise ShapeMismatchError(f"conv1d: expected (C_in,L) and (C_out,C_in,K), got {x.shape}, {w.shape}")
    c_in, length = x.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w:
        raise ShapeMismatchError(f"conv1d: input channels {x.shape} vs kernel {w.shape}")
    if length < k:
        raise ShapeMismatchError(f"conv1d: input length {length} shorter than kernel {k}")
    if stride < 1:
        raise ShapeMismatchError(f"conv1d: stride must be >= 1, got {stride}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=1)[:, ::stride, :]
    out = np.einsum("ock,ctk->ot", w.data, windows)
    t_out = out.shape[1]
    xd, wd = x.data, w.data

    def _backward(g):
        gw = np.einsum("ot,ctk->ock", g, windows)
        gx = np.zeros_like(xd)
        idx = stride * np.arange(t_out)
        for kk in range(k):
            # positions idx+kk are unique within one kernel offset
            gx[:, idx + kk] += np.einsum("ot,oc->ct", g, wd[:, :, kk])
        return gx, gw

    return _apply("conv1d", (x, w), out, _backward)


def _reduce(a: Tensor, axis, keepdims, np_fn, scale_fn) -> Tensor:
    out = np_fn(a.data, axis=axis, keepdims=keepdims)
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        count = shape[axis]
    scale = scale_fn(count)

    def _backward(g):
        g = np.asarray(g)
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * scale, shape).copy(),)

    name = "sum" if np_fn is np.sum else "mean"
    return _apply(name, (a,), np.asarray(out, dtype=np.float64), _backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return a.mean(axis=axis, keepdims=keepdims)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatchError(
            f"concat: shapes {[t.shape for t in tensors]} do not align on axis {axis}"
        )
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _apply("concat", tensors, out, _backward)


def tslice(a: Tensor, key) -> Tensor:
    """Basic (non-advanced) indexing/slicing."""
    out = a.data[key]
    shape = a.shape

    def _backward(g):
        gx = np.zeros(shape, dtype=np.float64)
        gx[key] = g
        return (gx,)

    return _apply("slice", (a,), np.ascontiguousarray(out), _backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = a.shape
    return _apply("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return _apply(
        "transpose", (a,), np.ascontiguousarray(out),
        lambda g: (np.ascontiguousarray(np.transpose(g, inv)),),
    )


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _apply("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, slope * a.data)
    return _apply("leaky_relu", (a,), out, lambda g: (g * np.where(mask, 1.0, slope),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximation GELU (golden values are stable under this form)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def _backward(g):
        sech2 = 1.0 - th * th
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * sech2 * d_inner),)

    return _apply("gelu", (a,), out, _backward)


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _apply("log", (a,), np.log(ad), lambda g: (g / ad,))


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    ad = a.data
    out = ad**p
    return _apply("power", (a,), out, lambda g: (g * p * ad ** (p - 1.0),))


def sqrt(a: Tensor) -> Tensor:
    return power(a, 0.5)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)

    def _backward(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _apply("softmax", (a,), s, _backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def _backward(g):
        return (g - s * np.sum(g, axis=axis, keepdims=True),)

    return _apply("log_softmax", (a,), out, _backward)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int = 1,
               eps: float = 1e-5) -> Tensor:
    """Group normalization over a (C, T) map; gamma/beta are per-channel.

    Channels split into ``groups`` equal groups, each normalized over its
    own (C/groups * T) elements. Zero input normalizes to zero thanks to eps.
    """
    if x.ndim != 2:
        raise ShapeMismatchError(f"group_norm: expected (C,T), got {x.shape}")
    c, t = x.shape
    if c % groups != 0:
        raise ShapeMismatchError(f"group_norm: {c} channels not divisible into {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatchError(
            f"group_norm: gamma/beta must be ({c},), got {gamma.shape}, {beta.shape}"
        )
    xg = x.data.reshape(groups, -1)
    mu = xg.mean(axis=1, keepdims=True)
    var = xg.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(c, t)
    out = gamma.data[:, None] * xhat + beta.data[:, None]

    def _backward(g):
        dgamma = np.sum(g * xhat, axis=1)
        dbeta = np.sum(g, axis=1)
        gh = (g * gamma.data[:, None]).reshape(groups, -1)
        xh = xhat.reshape(groups, -1)
        m1 = gh.mean(axis=1, keepdims=True)
        m2 = (gh * xh).mean(axis=1, keepdims=True)
        dx = (inv * (gh - m1 - xh * m2)).reshape(c, t)
        return dx, dgamma, dbeta

    return _apply("group_norm", (x, gamma, beta), out, _backward)


def backward(loss: Tensor) -> None:
    """Backward on the active tape (see :meth:`Tape.backward`)."""
    current_tape().backward(loss)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Compare analytic and central-difference gradients of scalar ``f(x)``.

    Returns the max over coordinates of |analytic - numeric| /
    max(1, |analytic| + |numeric|). Coordinates where the one-sided
    derivatives disagree (a kink, e.g. relu at exactly 0) raise
    :class:`NonDifferentiablePointWarning` and are excluded from the max.
    A non-finite numeric estimate raises :class:`NumericFaultError` naming
    the coordinate.
    """
    with fresh_tape() as tape:
        xv = Tensor(x.data.copy(), requires_grad=True)
        y = f(xv)
        if y.size != 1:
            raise ShapeMismatchError(f"grad_check: f must return a scalar, got {y.shape}")
        tape.backward(y)
        analytic = xv.grad.copy() if xv.grad is not None else np.zeros_like(xv.data)

    def f_val(arr: np.ndarray) -> float:
        with no_grad():
            return f(Tensor(arr)).item()

    base = x.data.copy()
    flat = base.reshape(-1)
    a_flat = analytic.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f_val(base)
        flat[i] = orig - h
        down = f_val(base)
        flat[i] = orig
        numeric = (up - down) / (2.0 * h)
        if not np.isfinite(numeric):
            raise NumericFaultError(f"grad_check: non-finite numeric gradient at coordinate {i}")
        err = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]) + abs(numeric))
        if err > 1e-3:
            mid = f_val(base)
            d_plus = (up - mid) / h
            d_minus = (mid - down) / h
            if abs(d_plus - d_minus) > 0.1 * max(1.0, abs(d_plus) + abs(d_minus)):
                warnings.warn(
                    f"non-differentiable point at coordinate {i}: one-sided "
                    f"derivatives {d_plus:.4g} vs {d_minus:.4g}",
                    NonDifferentiablePointWarning,
                )
                continue
        worst = max(worst, err)
    return worst
