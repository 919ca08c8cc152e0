"""Reverse-mode automatic differentiation on dense float64 arrays.

Every operation records a node on an implicit tape. Backward closures are
written in terms of the ops in this module, so gradients themselves can be
recorded and differentiated again (needed for gradient penalties). All
arithmetic is float64; any op that produces a non-finite value raises
NonFiniteError instead of letting NaN/inf propagate silently.
"""

from __future__ import annotations

import itertools
import math
from contextlib import nullcontext

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class NonFiniteError(ArithmeticError):
    """An op produced (or was handed) NaN or infinity."""


class TapeError(RuntimeError):
    """Invalid use of the recording, e.g. replaying a consumed backward."""


_GRAD_ENABLED = True
_SEQ = itertools.count()


class no_grad:
    """Context manager that suspends recording. Ops inside run as plain numpy."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tape:
    """Ordered record of nodes created during a forward pass."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __repr__(self):
        return f"Tape({len(self.nodes)} nodes)"


_ACTIVE_TAPE: Tape | None = None


def _active_tape() -> Tape:
    global _ACTIVE_TAPE
    if _ACTIVE_TAPE is None:
        _ACTIVE_TAPE = Tape()
    return _ACTIVE_TAPE


class _Node:
    __slots__ = ("op", "inputs", "out", "backward_fn", "seq", "tape", "consumed")

    def __init__(self, op, inputs, out, backward_fn, tape):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn
        self.seq = next(_SEQ)
        self.tape = tape
        self.consumed = False


def _check_finite(arr: np.ndarray, op: str):
    # cheap screen first: the sum is non-finite iff some entry is, short of
    # a genuine float64 overflow, which the full check below also treats as
    # non-finite anyway
    if not math.isfinite(arr.sum()):
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"{op} produced a non-finite value")
        raise NonFiniteError(f"{op} overflowed float64")


class Tensor:
    """Dense float64 array with optional gradient tracking.

    ``data`` is the underlying numpy array, ``grad`` (a numpy array or None)
    is populated by backward(). Tensors created inside a recorded forward
    pass carry a reference to the node that produced them.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def tape(self):
        return self._node.tape if self._node is not None else None

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return powc(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self):
        return transpose_last(self)

    def backward(self):
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out_data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    _check_finite(out_data, op)
    requires = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = requires
    out.grad = None
    out._node = None
    if requires:
        tape = _active_tape()
        node = _Node(op, inputs, out, backward_fn, tape)
        out._node = node
        tape.nodes.append(node)
    return out


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    """Reduce a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    axes = tuple(range(lead))
    axes += tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and g.shape[i + lead] != 1
    )
    return reshape(tsum(g, axis=axes, keepdims=False), shape)


# ---------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from e

    def backward_fn(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _record("add", out, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as e:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}") from e

    def backward_fn(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(neg(g), b.shape) if b.requires_grad else None
        return ga, gb

    return _record("sub", out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from e

    def backward_fn(g):
        ga = _unbroadcast(mul(g, b), a.shape) if a.requires_grad else None
        gb = _unbroadcast(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _record("mul", out, (a, b), backward_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        try:
            out = a.data / b.data
        except ValueError as e:
            raise ShapeError(f"div: {a.shape} vs {b.shape}") from e

    def backward_fn(g):
        ga = _unbroadcast(div(g, b), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _record("div", out, (a, b), backward_fn)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(g):
        return (neg(g),)

    return _record("neg", -a.data, (a,), backward_fn)


def powc(a: Tensor, exponent) -> Tensor:
    """Elementwise power with a constant (non-differentiated) exponent."""
    a = _as_tensor(a)
    c = float(exponent)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = a.data ** c

    def backward_fn(g):
        return (mul(mul(g, c), powc(a, c - 1.0)),)

    return _record("pow", out, (a,), backward_fn)


def texp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def backward_fn(g):
        return (mul(g, out),)

    out = _record("exp", out_data, (a,), backward_fn)
    return out


def tlog(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def backward_fn(g):
        return (div(g, a),)

    return _record("log", out, (a,), backward_fn)


def tsqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(invalid="ignore"):
        out_data = np.sqrt(a.data)

    def backward_fn(g):
        return (div(mul(g, 0.5), out),)

    out = _record("sqrt", out_data, (a,), backward_fn)
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]. Gradient is zero outside the open interval."""
    a = _as_tensor(a)
    if not lo < hi:
        raise ValueError(f"clip: lo={lo} must be < hi={hi}")
    out = np.clip(a.data, lo, hi)
    mask = Tensor(((a.data > lo) & (a.data < hi)).astype(np.float64))

    def backward_fn(g):
        return (mul(g, mask),)

    return _record("clip", out, (a,), backward_fn)


# ---------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in (shape if np.iterable(shape) else (shape,)))
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from e

    def backward_fn(g):
        return (reshape(g, a.shape),)

    return _record("reshape", out, (a,), backward_fn)


def transpose_last(a: Tensor) -> Tensor:
    """Swap the last two axes (plain transpose for 2-D input)."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose_last needs ndim >= 2, got {a.shape}")

    def backward_fn(g):
        return (transpose_last(g),)

    return _record("transpose", np.swapaxes(a.data, -1, -2), (a,), backward_fn)


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as e:
        raise ShapeError(f"broadcast_to: {a.shape} -> {shape}") from e

    def backward_fn(g):
        return (_unbroadcast(g, a.shape),)

    return _record("broadcast_to", out, (a,), backward_fn)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        axes = tuple(range(a.ndim))
    elif np.iterable(axis):
        axes = tuple(int(ax) % max(a.ndim, 1) for ax in axis)
    else:
        axes = (int(axis) % max(a.ndim, 1),)
    out = a.data.sum(axis=axes if a.ndim else None, keepdims=keepdims)
    kept_shape = tuple(
        1 if i in axes else s for i, s in enumerate(a.shape)
    )

    def backward_fn(g):
        gk = g if keepdims or a.ndim == 0 else reshape(g, kept_shape)
        return (broadcast_to(gk, a.shape),)

    return _record("sum", np.asarray(out, dtype=np.float64), (a,), backward_fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if a.size == 0:
        raise ShapeError("mean of an empty tensor")
    s = tsum(a, axis=axis, keepdims=keepdims)
    count = a.size / max(s.size, 1)
    return mul(s, 1.0 / count)


# ---------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors, or batched product of two 3-D
    tensors with equal leading dimension."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ShapeError(f"matmul needs two 2-D or two 3-D tensors, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions {a.shape} x {b.shape} do not agree")
    if a.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul: batch dimensions {a.shape[0]} vs {b.shape[0]} differ")
    out = a.data @ b.data

    def backward_fn(g):
        ga = matmul(g, transpose_last(b)) if a.requires_grad else None
        gb = matmul(transpose_last(a), g) if b.requires_grad else None
        return ga, gb

    return _record("matmul", out, (a, b), backward_fn)


# ---------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = Tensor((a.data > 0).astype(np.float64))

    def backward_fn(g):
        return (mul(g, mask),)

    return _record("relu", np.maximum(a.data, 0.0), (a,), backward_fn)


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"leaky_relu: alpha must lie in (0, 1), got {alpha}")
    out = np.where(a.data > 0, a.data, alpha * a.data)
    slope = Tensor(np.where(a.data > 0, 1.0, alpha))

    def backward_fn(g):
        return (mul(g, slope),)

    return _record("leaky_relu", out, (a,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = _record("tanh", np.tanh(a.data), (a,), backward_fn)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    # evaluate on the stable side of the exponential for each sign
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward_fn(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _record("sigmoid", out_data, (a,), backward_fn)
    return out


_ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "linear")


def activation(x: Tensor, kind: str, alpha: float = 0.2) -> Tensor:
    """Apply a named activation. ``alpha`` is only used by leaky_relu."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "linear":
        return _as_tensor(x)
    raise ValueError(f"unknown activation {kind!r}, expected one of {_ACTIVATIONS}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (composed from primitives)."""
    x = _as_tensor(x)
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    e = texp(sub(x, shift))
    return div(e, tsum(e, axis=axis, keepdims=True))


# ---------------------------------------------------------------------
# 1-D convolution family
#
# conv1d computes cross-correlation (no kernel flip): for stride s and
# padding p, out[b,o,j] = sum_{c,t} x[b,c,j*s+t-p] * w[o,c,t].
# conv1d_transpose is its exact adjoint in the input argument, and the
# kernel-gradient op below closes the family under differentiation, so
# all three can appear in backward closures of each other.
# ---------------------------------------------------------------------

def conv_output_length(length: int, kernel_size: int, stride: int, padding: int) -> int:
    if length + 2 * padding < kernel_size:
        raise ShapeError(
            f"conv1d: input length {length} with padding {padding} is shorter "
            f"than kernel size {kernel_size}"
        )
    return (length + 2 * padding - kernel_size) // stride + 1


def conv_transpose_output_length(length: int, kernel_size: int, stride: int, padding: int) -> int:
    out = (length - 1) * stride - 2 * padding + kernel_size
    if out < 1:
        raise ShapeError(
            f"conv1d_transpose: output length {out} < 1 for input length {length}, "
            f"kernel {kernel_size}, stride {stride}, padding {padding}"
        )
    return out


def _check_conv_args(stride, padding):
    if int(stride) < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if int(padding) < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    return int(stride), int(padding)


def _promote_conv_input(x: Tensor):
    """Lift 1-D [L] or 2-D [C,L] input to 3-D [B,C,L], remembering the rank."""
    rank = x.ndim
    if rank == 1:
        return reshape(x, (1, 1, x.shape[0])), rank
    if rank == 2:
        return reshape(x, (1,) + x.shape), rank
    if rank == 3:
        return x, rank
    raise ShapeError(f"conv input must be 1-D, 2-D or 3-D, got {x.shape}")


def _promote_kernel(w: Tensor):
    if w.ndim == 1:
        return reshape(w, (1, 1, w.shape[0]))
    if w.ndim == 3:
        return w
    raise ShapeError(f"kernel must be 1-D [k] or 3-D [out,in,k], got {w.shape}")


def _demote_conv_output(y: Tensor, rank: int) -> Tensor:
    if rank == 3:
        return y
    if rank == 2:
        return reshape(y, y.shape[1:])
    # 1-D input: drop batch, and channel too when there is only one
    if y.shape[1] == 1:
        return reshape(y, (y.shape[2],))
    return reshape(y, y.shape[1:])


def _conv1d_windows(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Strided view of the padded input: [B, C, L_out, k]."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    wins = np.lib.stride_tricks.sliding_window_view(x, k, axis=2)
    return wins[:, :, ::stride, :]

def _conv1d_raw(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    batch, _, length = x.shape
    c_out, c_in, k = w.shape
    l_out = conv_output_length(length, k, stride, padding)
    wins = _conv1d_windows(x, k, stride, padding)
    cols = np.ascontiguousarray(wins.transpose(0, 2, 1, 3)).reshape(batch, l_out, c_in * k)
    out = cols @ w.reshape(c_out, c_in * k).T
    return out.transpose(0, 2, 1)


def _conv1d_transpose_raw(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                          out_len: int) -> np.ndarray:
    batch, c_in, l_in = x.shape
    _, c_out, k = w.shape
    # contributions of every (input position, kernel tap) pair, via one gemm:
    # [B*L, O] @ [O, C*k] -> [B, L, C, k]
    xt = np.ascontiguousarray(x.transpose(0, 2, 1)).reshape(batch * l_in, c_in)
    contrib = (xt @ w.reshape(c_in, c_out * k)).reshape(batch, l_in, c_out, k)
    full = (l_in - 1) * stride + k
    buf = np.zeros((batch, c_out, full))
    for t in range(k):
        buf[:, :, t : t + stride * l_in : stride] += contrib[:, :, :, t].transpose(0, 2, 1)
    # crop the padding margin; contributions outside [p, p+out_len) are dropped
    end = padding + out_len
    if end <= full:
        return buf[:, :, padding:end]
    out = np.zeros((batch, c_out, out_len))
    out[:, :, : full - padding] = buf[:, :, padding:]
    return out


def _conv1d_kgrad_raw(x: np.ndarray, gout: np.ndarray, stride: int, padding: int,
                      k: int) -> np.ndarray:
    batch, c_in, _ = x.shape
    _, c_out, l_out = gout.shape
    wins = _conv1d_windows(x, k, stride, padding)
    g2 = np.ascontiguousarray(gout.transpose(1, 0, 2)).reshape(c_out, batch * l_out)
    w2 = np.ascontiguousarray(wins.transpose(0, 2, 1, 3)).reshape(batch * l_out, c_in * k)
    return (g2 @ w2).reshape(c_out, c_in, k)


def conv1d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation of ``x`` [B,C,L] with kernels ``w`` [O,C,k].

    1-D and 2-D inputs are treated as single-sample convenience forms and
    the output is returned at the matching rank.
    """
    stride, padding = _check_conv_args(stride, padding)
    x3, rank = _promote_conv_input(_as_tensor(x))
    w3 = _promote_kernel(_as_tensor(w))
    if x3.shape[1] != w3.shape[1]:
        raise ShapeError(
            f"conv1d: input has {x3.shape[1]} channels but kernel expects {w3.shape[1]}"
        )
    k = w3.shape[2]
    length = x3.shape[2]
    out = _conv1d_raw(x3.data, w3.data, stride, padding)

    def backward_fn(g):
        gx = None
        if x3.requires_grad:
            gx = conv1d_transpose(g, w3, stride, padding, output_length=length)
        gw = None
        if w3.requires_grad:
            gw = _conv1d_kgrad(x3, g, stride, padding, k)
        return gx, gw

    y = _record("conv1d", out, (x3, w3), backward_fn)
    return _demote_conv_output(y, rank)


def conv1d_transpose(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0,
                     output_length: int | None = None) -> Tensor:
    """Transposed 1-D convolution (the adjoint of conv1d in its input).

    ``x`` is [B,O,L], kernels are [O,C,k], output is [B,C,L_out] with
    L_out = (L-1)*stride - 2*padding + k unless ``output_length`` overrides
    it (gradients of strided convolutions need the longer original length).
    """
    stride, padding = _check_conv_args(stride, padding)
    x3, rank = _promote_conv_input(_as_tensor(x))
    w3 = _promote_kernel(_as_tensor(w))
    if x3.shape[1] != w3.shape[0]:
        raise ShapeError(
            f"conv1d_transpose: input has {x3.shape[1]} channels but kernel has "
            f"{w3.shape[0]} input channels"
        )
    k = w3.shape[2]
    if output_length is None:
        out_len = conv_transpose_output_length(x3.shape[2], k, stride, padding)
    else:
        out_len = int(output_length)
        if out_len < 1:
            raise ShapeError(f"conv1d_transpose: output_length must be >= 1, got {out_len}")
    out = _conv1d_transpose_raw(x3.data, w3.data, stride, padding, out_len)

    def backward_fn(g):
        gx = conv1d(g, w3, stride, padding) if x3.requires_grad else None
        gw = _conv1d_kgrad(g, x3, stride, padding, k) if w3.requires_grad else None
        return gx, gw

    y = _record("conv1d_transpose", out, (x3, w3), backward_fn)
    return _demote_conv_output(y, rank)


def _conv1d_kgrad(x: Tensor, gout: Tensor, stride: int, padding: int, k: int) -> Tensor:
    """Gradient of conv1d w.r.t. its kernel, itself differentiable.

    x is the conv input [B,C,L], gout the output gradient [B,O,L_out];
    the result has kernel shape [O,C,k].
    """
    x3 = _as_tensor(x)
    g3 = _as_tensor(gout)
    length = x3.shape[2]
    out = _conv1d_kgrad_raw(x3.data, g3.data, stride, padding, k)

    def backward_fn(g):
        # g has kernel shape [O,C,k] and plays the role of a kernel here
        gx = None
        if x3.requires_grad:
            gx = conv1d_transpose(g3, g, stride, padding, output_length=length)
        gg = conv1d(x3, g, stride, padding) if g3.requires_grad else None
        return gx, gg

    return _record("conv1d_kgrad", out, (x3, g3), backward_fn)


# ---------------------------------------------------------------------
# batch normalization (composed from primitives so it stays differentiable)
# ---------------------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Normalize a 2-D batch [B,F] per feature using batch statistics.

    Returns (out, batch_mean, batch_var) where the statistics are plain
    numpy arrays (biased variance), for the caller's running estimates.
    """
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"batch_norm expects a 2-D [batch, features] input, got {x.shape}")
    if x.shape[0] < 2:
        raise ShapeError(f"batch_norm needs a batch of at least 2, got {x.shape[0]}")
    mean = tmean(x, axis=0, keepdims=True)
    centered = sub(x, mean)
    var = tmean(mul(centered, centered), axis=0, keepdims=True)
    inv = div(1.0, tsqrt(add(var, eps)))
    out = add(mul(mul(centered, inv), gamma), beta)
    return out, mean.data.reshape(-1).copy(), var.data.reshape(-1).copy()


def batch_norm_inference(x: Tensor, gamma: Tensor, beta: Tensor,
                         running_mean: np.ndarray, running_var: np.ndarray,
                         eps: float = 1e-5) -> Tensor:
    """Affine normalization with frozen statistics. The running mean and
    variance are constants; gradients flow to x, gamma, and beta."""
    x = _as_tensor(x)
    inv = Tensor(1.0 / np.sqrt(np.asarray(running_var, dtype=np.float64) + eps))
    centered = sub(x, Tensor(np.asarray(running_mean, dtype=np.float64)))
    return add(mul(centered, mul(_as_tensor(gamma), inv)), _as_tensor(beta))


# ---------------------------------------------------------------------
# backward engine
# ---------------------------------------------------------------------

def _reachable(root: _Node):
    seen = set()
    order = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        order.append(node)
        for t in node.inputs:
            if t._node is not None and id(t._node) not in seen:
                stack.append(t._node)
    order.sort(key=lambda n: n.seq)
    return order


def _walk(loss: Tensor, create_graph: bool):
    """Run the reverse sweep, returning {id(tensor): (tensor, grad Tensor)}."""
    nodes = _reachable(loss._node)
    grads = {id(loss): loss}
    acc = {id(loss): Tensor(np.ones_like(loss.data))}
    ctx = nullcontext() if create_graph else no_grad()
    with ctx:
        for node in reversed(nodes):
            g = acc.get(id(node.out))
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for t, ig in zip(node.inputs, in_grads):
                if ig is None or not t.requires_grad:
                    continue
                if id(t) in acc:
                    acc[id(t)] = add(acc[id(t)], ig)
                else:
                    acc[id(t)] = ig
                    grads[id(t)] = t
    return nodes, {k: (grads[k], acc[k]) for k in acc}


def _check_scalar(loss: Tensor):
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise TapeError("tensor was not recorded on any tape (nothing to differentiate)")


def backward(loss: Tensor, tape: Tape | None = None):
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every leaf tensor
    (one not produced by a recorded op) that requires gradients and was
    used to compute ``loss``. Gradients of intermediate tensors are not
    retained; use grad() to query those.

    Consumes the recording: running backward again over any of the same
    nodes raises TapeError until a fresh forward pass re-records them.
    """
    global _ACTIVE_TAPE
    _check_scalar(loss)
    if tape is not None and loss._node.tape is not tape:
        raise TapeError("loss tensor is not on the given tape")
    if loss._node.consumed:
        raise TapeError("this recording was already consumed by a previous backward")
    nodes, collected = _walk(loss, create_graph=False)
    for node in nodes:
        if node.consumed:
            raise TapeError("this recording was already consumed by a previous backward")
    for t, g in collected.values():
        if t._node is not None:
            continue
        _check_finite(g.data, "backward")
        if t.grad is None:
            t.grad = g.data.copy()
        else:
            t.grad = t.grad + g.data
    for node in nodes:
        node.consumed = True
    if _ACTIVE_TAPE is not None and loss._node.tape is _ACTIVE_TAPE:
        _ACTIVE_TAPE = None


def grad(output: Tensor, inputs, create_graph: bool = False):
    """Return d(output)/d(input) for each tensor in ``inputs`` without
    touching ``.grad`` or consuming the recording.

    With ``create_graph=True`` the returned tensors are themselves recorded,
    so they can be differentiated again (double backward).
    """
    _check_scalar(output)
    _, collected = _walk(output, create_graph=create_graph)
    out = []
    for t in inputs:
        entry = collected.get(id(t))
        if entry is None:
            out.append(Tensor(np.zeros_like(t.data)))
        else:
            out.append(entry[1])
    return out
