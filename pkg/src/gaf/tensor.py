"""Dense float64 tensors with tape-based reverse-mode autodiff.

Everything in this package that needs gradients runs through the primitives
here. Ops record onto the active :class:`Tape`; a reversed walk of the tape
is the backward pass. Values are plain numpy arrays, kept 64-bit so the
finite-difference test suite has precision headroom.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from gaf import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class DomainError(ValueError):
    """Input values outside the mathematical domain of the op (e.g. log of 0)."""


class ContractError(ValueError):
    """An op precondition was violated by the caller."""


class NumericalError(ArithmeticError):
    """An op produced a non-finite value from finite inputs."""


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim > 0 and not a.flags["C_CONTIGUOUS"]:
        a = np.ascontiguousarray(a)  # ascontiguousarray would promote 0-d to 1-d
    return a


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    Data is treated as immutable once the tensor has been used in a forward
    pass; the optimizer mutates leaf parameters only between tapes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all arithmetic goes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        if isinstance(key, slice):
            start, stop, step = key.indices(self.data.shape[0])
            if step != 1:
                raise ContractError("only contiguous row slices are differentiable")
            return slice_rows(self, start, stop)
        raise ContractError("tensor indexing supports row slices only")


class Tape:
    """Ordered record of executed primitives.

    Ops append themselves during the forward pass, which guarantees the
    entries are already in topological order; ``backward`` walks them once
    in reverse.
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.visited = 0

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backfn: Callable) -> None:
        self.entries.append((out, inputs, backfn))
        out._tape = self

    def backward(self, loss: Tensor) -> None:
        if loss.data.shape != ():
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
        loss.accumulate_grad(np.ones((), dtype=np.float64))
        self.visited = 0
        for out, inputs, backfn in reversed(self.entries):
            self.visited += 1
            gout = out.grad
            if gout is None:
                continue
            grads = backfn(gout)
            for inp, g in zip(inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                inp.accumulate_grad(g)


_TAPES: list[Tape] = []


def active_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss tensor."""
    tape = loss._tape or active_tape()
    if tape is None:
        # leaf loss: the graph is a single node
        if loss.data.shape != ():
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
        loss.accumulate_grad(np.ones((), dtype=np.float64))
        return
    tape.backward(loss)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite_guard(data: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op} produced a non-finite value")
    return data


def _make(data: np.ndarray, op: str, inputs: tuple[Tensor, ...], backfn: Callable) -> Tensor:
    _finite_guard(data, op)
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backfn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a.data, b.data, "add")
    return _make(
        a.data + b.data,
        "add",
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a.data, b.data, "sub")
    return _make(
        a.data - b.data,
        "sub",
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a.data, b.data, "mul")
    return _make(
        a.data * b.data,
        "mul",
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a.data, b.data, "div")
    if np.any(b.data == 0.0):
        raise DomainError("div: zero denominator")
    out = a.data / b.data
    return _make(
        out,
        "div",
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * out / b.data, b.data.shape),
        ),
    )


def neg(a) -> Tensor:
    a = _coerce(a)
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = _coerce(a)
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: non-positive input")
    return _make(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def square(a) -> Tensor:
    a = _coerce(a)
    return _make(a.data * a.data, "square", (a,), lambda g: (2.0 * a.data * g,))


_SIG_HI = np.nextafter(1.0, 0.0)
_SIG_LO = np.nextafter(0.0, 1.0)


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # keep the output strictly inside (0, 1) even under saturation
    np.clip(out, _SIG_LO, _SIG_HI, out=out)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = _coerce(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def softplus(a) -> Tensor:
    a = _coerce(a)
    x = a.data
    out = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))
    sig = 1.0 / (1.0 + np.exp(-np.clip(x, -700.0, 700.0)))
    return _make(out, "softplus", (a,), lambda g: (g * sig,))


def smooth_l1(a) -> Tensor:
    """Huber penalty of a residual: 0.5*r^2 for |r|<1, |r|-0.5 beyond."""
    a = _coerce(a)
    r = a.data
    absr = np.abs(r)
    inner = absr < 1.0
    out = np.where(inner, 0.5 * r * r, absr - 0.5)
    return _make(out, "smooth_l1", (a,), lambda g: (g * np.where(inner, r, np.sign(r)),))


def ssum(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backfn(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, a.data.shape).copy(),)

    return _make(out, "sum", (a,), backfn)


def mean(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def backfn(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.data.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge / n, a.data.shape).copy(),)

    return _make(out, "mean", (a,), backfn)


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)
    _check_broadcast(a.data, np.empty(shape), "broadcast")
    out = np.broadcast_to(a.data, shape).copy()
    return _make(out, "broadcast", (a,), lambda g: (_unbroadcast(g, a.data.shape),))


# ---------------------------------------------------------------------------
# structural primitives


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return _make(out.copy(), "reshape", (a,), lambda g: (g.reshape(a.data.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backfn(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(ts))
        )

    return _make(out, "concat", tuple(ts), backfn)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = _coerce(a)
    if not (0 <= start <= stop <= a.data.shape[0]):
        raise ShapeError(f"slice [{start}:{stop}] out of range for {a.data.shape}")
    out = a.data[start:stop].copy()

    def backfn(g):
        gx = np.zeros_like(a.data)
        gx[start:stop] = g
        return (gx,)

    return _make(out, "slice_rows", (a,), backfn)


def upsample_nearest(a, out_len: int, factor: int = 2) -> Tensor:
    """Nearest-neighbor upsampling along axis 0 (row t comes from row t//factor)."""
    a = _coerce(a)
    in_len = a.data.shape[0]
    idx = np.minimum(np.arange(out_len) // factor, in_len - 1)
    out = a.data[idx].copy()

    def backfn(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(out, "upsample_nearest", (a,), backfn)


# ---------------------------------------------------------------------------
# dense linear algebra


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    return _make(
        a.data @ b.data,
        "matmul",
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def conv1d(x, weight, bias=None, stride: int = 1, padding: str = "same") -> Tensor:
    """Temporal convolution of x[T, C_in] with weight[k, C_in, C_out].

    padding="same" keeps T' = ceil(T / stride) and needs an odd k;
    padding="valid" gives T' = floor((T - k) / stride) + 1.
    """
    x, weight = _coerce(x), _coerce(weight)
    b = _coerce(bias) if bias is not None else None
    if x.data.ndim != 2 or weight.data.ndim != 3:
        raise ShapeError(f"conv1d: need x[T,C_in], weight[k,C_in,C_out], got {x.data.shape} and {weight.data.shape}")
    t_in, c_in = x.data.shape
    k, wc_in, c_out = weight.data.shape
    if wc_in != c_in:
        raise ShapeError(f"conv1d: channel mismatch, x has {c_in}, weight expects {wc_in}")
    if b is not None and b.data.shape != (c_out,):
        raise ShapeError(f"conv1d: bias shape {b.data.shape} != ({c_out},)")
    if stride < 1:
        raise ContractError(f"conv1d: stride must be >= 1, got {stride}")
    if padding == "same":
        if k % 2 == 0:
            raise ContractError(f"conv1d: padding='same' needs odd kernel size, got {k}")
        t_out = -(-t_in // stride)
        pad_left = (k - 1) // 2
    elif padding == "valid":
        if k > t_in:
            raise ShapeError(f"conv1d: kernel {k} longer than input {t_in} gives an empty output")
        t_out = (t_in - k) // stride + 1
        pad_left = 0
    else:
        raise ContractError(f"conv1d: unknown padding {padding!r}")

    bdata = b.data if b is not None else None
    out = kernels.conv1d_forward(x.data, weight.data, bdata, stride, pad_left, t_out)

    def backfn(g):
        g = np.ascontiguousarray(g)
        gx, gw, gb = kernels.conv1d_backward(g, x.data, weight.data, stride, pad_left)
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, weight, b) if b is not None else (x, weight)
    return _make(out, "conv1d", inputs, backfn)
