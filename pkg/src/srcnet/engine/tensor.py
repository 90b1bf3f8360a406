"""numpy-backed tensors with reverse-mode automatic differentiation.

Implements exactly the primitives the change-detection network needs:
elementwise arithmetic with broadcasting, matmul, 2-D convolution and
transposed convolution, a handful of nonlinearities and reductions, and
shape surgery (reshape / transpose / slice / concat). Every op records a
vector-Jacobian closure on the output; ``Tensor.backward()`` walks the
graph in reverse topological order and accumulates gradients with ``+=``
into every reachable tensor that requires grad, so calling backward twice
on the same graph doubles the gradients exactly.

All computation runs in float64 by default; float32 can be selected with
``set_default_dtype`` for faster training runs.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy import special as _special

__all__ = [
    "Tensor", "Parameter", "DimensionError", "no_grad",
    "set_default_dtype", "default_dtype",
    "concat", "conv2d", "conv_transpose2d", "exp", "gelu", "log",
    "matmul", "maximum", "sigmoid", "softmax", "sqrt",
    "zeros", "ones", "full", "randn",
]

_DEFAULT_DTYPE = np.float64
_GRAD_STATE = threading.local()   # graph recording is per-thread


def set_default_dtype(dtype) -> None:
    """Select float64 (default, used by all tests) or float32."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


def _grad_enabled() -> bool:
    return getattr(_GRAD_STATE, "enabled", True)


class no_grad:
    """Context manager that disables graph recording (fast inference).

    The flag is thread-local, so read-only inference under no_grad is safe
    from many threads at once.
    """

    def __enter__(self):
        self._prev = _grad_enabled()
        _GRAD_STATE.enabled = False
        return self

    def __exit__(self, *exc):
        _GRAD_STATE.enabled = self._prev
        return False


class DimensionError(ValueError):
    """Shape or axis mismatch, reported with the op name and offending axes."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype != _DEFAULT_DTYPE:
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    # ---------------------------------------------------------------- basics

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -------------------------------------------------------------- backward

    def backward(self) -> None:
        """Accumulate dself/dx into x.grad for every requires_grad ancestor.

        self must be scalar. Gradients add (+=) to whatever is already in
        .grad; use zero_grad / optimizer.zero_grad between steps.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward: loss must be a scalar, got shape {self.data.shape}")
        order = _toposort(self)
        flowing = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad += g
            if node._vjp is not None:
                for parent, pg in zip(node._parents, node._vjp(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in flowing:
                        flowing[key] = flowing[key] + pg
                    else:
                        flowing[key] = pg

    # ------------------------------------------------------------- operators

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class Parameter(Tensor):
    """A trainable tensor; Modules register these automatically."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def _toposort(root: Tensor):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._vjp = None
    out.requires_grad = (any(p.requires_grad for p in parents)
                         and _grad_enabled())
    if out.requires_grad:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ------------------------------------------------------------------ arithmetic

def add(a, b):
    a, b = _coerce(a), _coerce(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.data.shape),
                              _unbroadcast(g, b.data.shape)))


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.data.shape),
                              _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    a, b = _coerce(a), _coerce(b)

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return _result(a.data * b.data, (a, b), vjp)


def div(a, b):
    a, b = _coerce(a), _coerce(b)

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            if b.requires_grad else None,
        )

    return _result(a.data / b.data, (a, b), vjp)


def neg(a):
    a = _coerce(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    a = _coerce(a)
    c = float(exponent)
    out = a.data ** c
    return _result(out, (a,), lambda g: (g * c * a.data ** (c - 1.0),))


def exp(a):
    a = _coerce(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    a = _coerce(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = _coerce(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def maximum(a, floor: float):
    """Elementwise max against a scalar floor (used for probability clamps)."""
    a = _coerce(a)
    mask = a.data > floor
    return _result(np.maximum(a.data, floor), (a,),
                   lambda g: (g * mask,))


def sigmoid(a):
    a = _coerce(a)
    out = _special.expit(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Exact Gaussian error linear unit x * Phi(x)."""
    a = _coerce(a)
    cdf = _special.erf(a.data * _INV_SQRT2)
    cdf += 1.0
    cdf *= 0.5
    out = a.data * cdf

    def vjp(g):
        pdf = a.data * a.data
        pdf *= -0.5
        np.exp(pdf, out=pdf)
        pdf *= _INV_SQRT2PI
        pdf *= a.data
        pdf += cdf
        pdf *= g
        return (pdf,)

    return _result(out, (a,), vjp)


def softmax(a, axis: int):
    """Numerically stable softmax along `axis`."""
    a = _coerce(a)
    shifted = sub(a, a.data.max(axis=axis, keepdims=True))
    e = exp(shifted)
    return div(e, sum_(e, axis=axis, keepdims=True))


# ------------------------------------------------------------------ reductions

def sum_(a, axis=None, keepdims=False):
    a = _coerce(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy()
                    if np.ndim(g) == a.data.ndim else np.full_like(a.data, g),)
        g_ = g
        if not keepdims:
            g_ = np.expand_dims(g, axis)
        return (np.broadcast_to(g_, a.data.shape),)

    return _result(np.asarray(out), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = _coerce(a)
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        n = a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul: operands must have ndim >= 2, got {a.ndim} and {b.ndim}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul: inner axes disagree, {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return (ga, gb)

    return _result(out, (a, b), vjp)


# --------------------------------------------------------------- shape surgery

def reshape(a, shape):
    a = _coerce(a)
    out = a.data.reshape(shape)
    return _result(out, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes):
    a = _coerce(a)
    inverse = np.argsort(axes)
    return _result(a.data.transpose(axes), (a,),
                   lambda g: (g.transpose(inverse),))


def take(a, index):
    """Basic (non-fancy) indexing with gradient scatter-back."""
    a = _coerce(a)
    out = a.data[index]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _result(out, (a,), vjp)


def pad2d(a, pad: int):
    """Zero-pad the last two axes by `pad` on every side."""
    a = _coerce(a)
    if pad == 0:
        return a
    spec = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]
    out = np.pad(a.data, spec)
    sl = (Ellipsis, slice(pad, -pad), slice(pad, -pad))
    return _result(out, (a,), lambda g: (g[sl],))


def concat(tensors, axis: int):
    tensors = [_coerce(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tensors, vjp)


# ----------------------------------------------------------------- convolution

def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def _im2col(x: np.ndarray, kh, kw, sh, sw, ph, pw):
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    B, C, Hp, Wp = x.shape
    oh = (Hp - kh) // sh + 1
    ow = (Wp - kw) // sw + 1
    s0, s1, s2, s3 = x.strides
    cols = np.lib.stride_tricks.as_strided(
        x, (B, C, kh, kw, oh, ow), (s0, s1, s2, s3, s2 * sh, s3 * sw),
        writeable=False)
    return cols, oh, ow


def _conv_forward(x, w, stride, padding, groups):
    B, Cin, H, W = x.shape
    Cout, Cg, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    cols, oh, ow = _im2col(x, kh, kw, sh, sw, ph, pw)
    cols = cols.reshape(B, groups, Cg * kh * kw, oh * ow)
    w_r = w.reshape(groups, Cout // groups, Cg * kh * kw)
    y = np.matmul(w_r, cols)  # (B, G, Cout/G, oh*ow)
    return y.reshape(B, Cout, oh, ow), cols


# For depthwise convolutions (groups == channels) the generic matmul
# input-gradient degenerates into tiny per-channel products; a
# shift-and-accumulate loop over kernel offsets is faster there.

def _dw_input_grad(g, w, x_shape, stride, padding):
    B, C, H, W = x_shape
    _, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh, ow = g.shape[2], g.shape[3]
    dxp = np.zeros((B, C, H + 2 * ph, W + 2 * pw), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += \
                w[:, 0, i, j][None, :, None, None] * g
    if ph or pw:
        return dxp[:, :, ph:ph + H, pw:pw + W]
    return dxp


def _conv_weight_grad(cols, gy, w_shape, groups):
    Cout, Cg, kh, kw = w_shape
    B = gy.shape[0]
    gy_r = gy.reshape(B, groups, Cout // groups, -1)
    dw = np.matmul(gy_r, cols.transpose(0, 1, 3, 2)).sum(axis=0)
    return dw.reshape(w_shape)


def _conv_input_grad(gy, w, x_shape, stride, padding, groups):
    B, Cin, H, W = x_shape
    Cout, Cg, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh, ow = gy.shape[2], gy.shape[3]
    w_r = w.reshape(groups, Cout // groups, Cg * kh * kw)
    gy_r = gy.reshape(B, groups, Cout // groups, oh * ow)
    dcols = np.matmul(w_r.transpose(0, 2, 1), gy_r)
    dcols = dcols.reshape(B, Cin, kh, kw, oh, ow)
    dxp = np.zeros((B, Cin, H + 2 * ph, W + 2 * pw), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += dcols[:, :, i, j]
    if ph or pw:
        return dxp[:, :, ph:ph + H, pw:pw + W]
    return dxp


def conv2d(x, weight, bias=None, stride=1, padding=0, groups: int = 1):
    """2-D convolution; weight is (out_ch, in_ch/groups, kh, kw)."""
    x, weight = _coerce(x), _coerce(weight)
    stride, padding = _pair(stride), _pair(padding)
    B, Cin, H, W = x.data.shape
    Cout, Cg, kh, kw = weight.data.shape
    if Cin != Cg * groups or Cout % groups:
        raise DimensionError(
            f"conv2d: input channels {Cin} do not match weight {weight.data.shape} "
            f"with groups={groups}")
    if H + 2 * padding[0] < kh or W + 2 * padding[1] < kw:
        raise DimensionError(
            f"conv2d: spatial extent {(H, W)} too small for kernel {(kh, kw)} "
            f"with padding {padding}")
    depthwise = groups == Cin and Cg == 1 and Cout == Cin
    out, cols = _conv_forward(x.data, weight.data, stride, padding, groups)
    parents = [x, weight]
    if bias is not None:
        bias = _coerce(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def vjp(g):
        gx = gw = None
        if x.requires_grad:
            if depthwise:
                gx = _dw_input_grad(g, weight.data, x.data.shape, stride, padding)
            else:
                gx = _conv_input_grad(g, weight.data, x.data.shape, stride,
                                      padding, groups)
        if weight.requires_grad:
            gw = _conv_weight_grad(cols, g, weight.data.shape, groups)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _result(out, parents, vjp)


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0):
    """2-D transposed convolution; weight is (in_ch, out_ch, kh, kw).

    Computes the adjoint of conv2d with the same stride/padding, so the
    output spatial extent is (H-1)*stride - 2*padding + kernel.
    """
    x, weight = _coerce(x), _coerce(weight)
    stride, padding = _pair(stride), _pair(padding)
    B, Cin, H, W = x.data.shape
    WCin, Cout, kh, kw = weight.data.shape
    if Cin != WCin:
        raise DimensionError(
            f"conv_transpose2d: input channels {Cin} != weight channels {WCin}")
    Hout = (H - 1) * stride[0] - 2 * padding[0] + kh
    Wout = (W - 1) * stride[1] - 2 * padding[1] + kw
    if Hout <= 0 or Wout <= 0:
        raise DimensionError(
            f"conv_transpose2d: output extent {(Hout, Wout)} is not positive")
    out_shape = (B, Cout, Hout, Wout)
    out = _conv_input_grad(x.data, weight.data, out_shape, stride, padding, 1)
    parents = [x, weight]
    if bias is not None:
        bias = _coerce(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def vjp(g):
        gx = dw = None
        if x.requires_grad or weight.requires_grad:
            gx, cols = _conv_forward(g, weight.data, stride, padding, 1)
            if weight.requires_grad:
                dw = _conv_weight_grad(cols, x.data, weight.data.shape, 1)
            if not x.requires_grad:
                gx = None
        grads = [gx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _result(out, parents, vjp)


# ----------------------------------------------------------------- constructors

def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad)


def ones(shape, requires_grad=False):
    return Tensor(np.ones(shape, dtype=_DEFAULT_DTYPE), requires_grad)


def full(shape, value, requires_grad=False):
    return Tensor(np.full(shape, value, dtype=_DEFAULT_DTYPE), requires_grad)


def randn(shape, rng: np.random.Generator, std=1.0, requires_grad=False):
    return Tensor(rng.standard_normal(shape) * std, requires_grad)
