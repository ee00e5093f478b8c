"""Minimal define-by-run tensor library with reverse-mode autodiff.

Every operation the restoration network and its losses need is here:
elementwise arithmetic, ``abs``/``exp``/``sigmoid``, reductions, PReLU,
2-D convolution and its transpose.  Data lives in NumPy arrays of dtype
float32 or float64; dtype is a per-tensor attribute and binary operations
refuse to mix the two.

Broadcasting is deliberately narrow.  Two operands combine when

* their shapes are equal,
* one of them holds a single element (any shape with size 1), or
* the larger one is 4-D ``(N, C, H, W)`` and the other has shape ``(C,)``
  or ``(1, C, 1, 1)`` (per-channel).

Anything else raises :class:`DimensionError`.

Backward rules are looked up by op name in :data:`BACKWARD_RULES` at sweep
time, so a rule can be swapped out (tests use this to plant a bug and check
that the gradient checker catches it).
"""

from __future__ import annotations

import itertools
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, DTypeError, NonFiniteError, SingularityError

DIV_EPS = 1e-12
AXIS_NAMES = ("batch axis", "channel axis", "height axis", "width axis")

_SUPPORTED = (np.dtype(np.float32), np.dtype(np.float64))
_ids = itertools.count()

BACKWARD_RULES: Dict[str, Callable] = {}


def _rule(name):
    def deco(fn):
        BACKWARD_RULES[name] = fn
        return fn

    return deco


class Tensor:
    """N-dimensional array node in a computation graph.

    Leaves are created directly; non-leaves are produced by operations and
    remember their parents, the op name and whatever the backward rule needs.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_op", "_parents", "_ctx", "_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _SUPPORTED:
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._op = None
        self._parents: Tuple[Tensor, ...] = ()
        self._ctx = None
        self._id = next(_ids)

    @classmethod
    def _from_op(cls, data, op, parents, ctx):
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out.name = None
        out._id = next(_ids)
        if out.requires_grad:
            out._op = op
            out._parents = tuple(parents)
            out._ctx = ctx
        else:
            out._op = None
            out._parents = ()
            out._ctx = None
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._op is None

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self):
        if self.requires_grad:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            else:
                self.grad[...] = 0

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{rg})"

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return abs_(self)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean(self)

    def exp(self):
        return exp(self)

    def sigmoid(self):
        return sigmoid(self)

    def abs(self):
        return abs_(self)

    def backward(self):
        backward(self)


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"operation '{op}' produced NaN or Inf")


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_dtype(a: Tensor, b: Tensor):
    if a.dtype != b.dtype:
        raise DTypeError(f"dtype mismatch: {a.dtype.name} vs {b.dtype.name}")


# -- broadcasting ----------------------------------------------------------

def _operand_view(shape, out_shape):
    """Return the reshape that lets numpy broadcast ``shape`` against ``out_shape``."""
    if shape == out_shape:
        return shape
    if int(np.prod(shape)) == 1:
        return ()
    return (1, shape[0], 1, 1) if len(shape) == 1 else shape


def _broadcast_shape(sa, sb):
    if sa == sb:
        return sa
    na, nb = int(np.prod(sa)), int(np.prod(sb))
    if nb == 1:
        return sa
    if na == 1:
        return sb

    def per_channel(small, big):
        if len(big) != 4:
            return False
        c = big[1]
        return small == (c,) or small == (1, c, 1, 1)

    if per_channel(sb, sa):
        return sa
    if per_channel(sa, sb):
        return sb
    detail = ""
    if len(sa) == len(sb):
        axis = next(k for k in range(len(sa)) if sa[k] != sb[k])
        name = AXIS_NAMES[axis] if len(sa) == 4 else f"axis {axis}"
        detail = f" ({name}: {sa[axis]} vs {sb[axis]})"
    raise DimensionError(f"shapes {sa} and {sb} are not broadcast-compatible{detail}")


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    if int(np.prod(shape)) == 1:
        return np.asarray(grad.sum(), dtype=grad.dtype).reshape(shape)
    return grad.sum(axis=(0, 2, 3)).reshape(shape)


def _binary_inputs(a, b):
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b.dtype if isinstance(b, Tensor) else None)
    if not isinstance(b, Tensor):
        b = _as_tensor(b, a.dtype)
    _check_dtype(a, b)
    out_shape = _broadcast_shape(a.shape, b.shape)
    av = a.data.reshape(_operand_view(a.shape, out_shape))
    bv = b.data.reshape(_operand_view(b.shape, out_shape))
    return a, b, av, bv, out_shape


def _fit(out, out_shape):
    if out.shape != out_shape:
        out = np.broadcast_to(out, out_shape).copy()
    return out


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b, av, bv, out_shape = _binary_inputs(a, b)
    return Tensor._from_op(_fit(av + bv, out_shape), "add", (a, b), (a.shape, b.shape))


@_rule("add")
def _add_backward(ctx, g):
    sa, sb = ctx
    return _unbroadcast(g, sa), _unbroadcast(g, sb)


def sub(a, b):
    a, b, av, bv, out_shape = _binary_inputs(a, b)
    return Tensor._from_op(_fit(av - bv, out_shape), "sub", (a, b), (a.shape, b.shape))


@_rule("sub")
def _sub_backward(ctx, g):
    sa, sb = ctx
    return _unbroadcast(g, sa), _unbroadcast(-g, sb)


def mul(a, b):
    a, b, av, bv, out_shape = _binary_inputs(a, b)
    out = _fit(av * bv, out_shape)
    return Tensor._from_op(out, "mul", (a, b), (av, bv, a.shape, b.shape))


@_rule("mul")
def _mul_backward(ctx, g):
    av, bv, sa, sb = ctx
    return _unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)


def div(a, b):
    """Quotient ``a / b``; any ``|b| < 1e-12`` raises :class:`SingularityError`."""
    a, b, av, bv, out_shape = _binary_inputs(a, b)
    small = np.abs(b.data) < DIV_EPS
    if small.any():
        idx = tuple(int(i) for i in np.argwhere(small)[0])
        raise SingularityError(f"division by near-zero value at index {idx}", index=idx)
    out = _fit(av / bv, out_shape)
    return Tensor._from_op(out, "div", (a, b), (av, bv, a.shape, b.shape))


@_rule("div")
def _div_backward(ctx, g):
    av, bv, sa, sb = ctx
    return _unbroadcast(g / bv, sa), _unbroadcast(-g * av / (bv * bv), sb)


def neg(a: Tensor):
    return Tensor._from_op(-a.data, "neg", (a,), None)


@_rule("neg")
def _neg_backward(ctx, g):
    return (-g,)


def abs_(a: Tensor):
    return Tensor._from_op(np.abs(a.data), "abs", (a,), np.sign(a.data))


@_rule("abs")
def _abs_backward(ctx, g):
    # np.sign(0) == 0, so abs'(0) is the zero subgradient
    return (g * ctx,)


def exp(a: Tensor):
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._from_op(out, "exp", (a,), out)


@_rule("exp")
def _exp_backward(ctx, g):
    return (g * ctx,)


def sigmoid(a: Tensor):
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    out = out.astype(a.dtype, copy=False)
    return Tensor._from_op(out, "sigmoid", (a,), out)


@_rule("sigmoid")
def _sigmoid_backward(ctx, g):
    return (g * ctx * (1.0 - ctx),)


def sum_(a: Tensor):
    return Tensor._from_op(np.asarray(a.data.sum(), dtype=a.dtype).reshape(1), "sum", (a,), a.shape)


@_rule("sum")
def _sum_backward(ctx, g):
    return (np.broadcast_to(g.reshape(()), ctx).copy(),)


def mean(a: Tensor):
    return Tensor._from_op(np.asarray(a.data.mean(), dtype=a.dtype).reshape(1), "mean", (a,), a.shape)


@_rule("mean")
def _mean_backward(ctx, g):
    n = int(np.prod(ctx))
    return (np.broadcast_to(g.reshape(()) / n, ctx).copy(),)


def prelu(x: Tensor, slope: Tensor):
    """``x`` where non-negative, ``slope * x`` elsewhere.

    ``slope`` is a single element or one value per channel of an NCHW input.
    """
    _check_dtype(x, slope)
    if slope.size == 1:
        sv = slope.data.reshape(())
    elif x.data.ndim == 4 and slope.shape in ((x.shape[1],), (1, x.shape[1], 1, 1)):
        sv = slope.data.reshape(1, -1, 1, 1)
    else:
        raise DimensionError(f"prelu slope shape {slope.shape} does not fit input {x.shape}")
    neg_mask = x.data < 0
    out = np.where(neg_mask, sv * x.data, x.data).astype(x.dtype, copy=False)
    return Tensor._from_op(out, "prelu", (x, slope), (x.data, sv, neg_mask, slope.shape))


@_rule("prelu")
def _prelu_backward(ctx, g):
    xd, sv, neg_mask, sshape = ctx
    gx = np.where(neg_mask, g * sv, g)
    gs_full = np.where(neg_mask, g * xd, 0.0).astype(g.dtype, copy=False)
    return gx, _unbroadcast(gs_full, sshape)


# -- convolution -------------------------------------------------------------

def _im2col(x, k, stride, pad):
    """Unfold ``(N, C, H, W)`` into ``(N, C*k*k, Ho*Wo)`` sliding-window columns."""
    n, c = x.shape[:2]
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)
    return cols, ho, wo


def _col2im(cols, shape, k, stride, pad, ho, wo):
    """Scatter-add columns back onto an ``(N, C, H, W)`` canvas; adjoint of _im2col."""
    n, c, h, w = shape
    canvas = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(n, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            canvas[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += cols[:, :, i, j]
    if pad:
        canvas = canvas[:, :, pad:pad + h, pad:pad + w]
    return canvas


def conv_output_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def deconv_output_size(size, k, stride, pad, output_padding=0):
    return (size - 1) * stride - 2 * pad + k + output_padding


def _check_geometry(stride, pad):
    if int(stride) != stride or stride < 1:
        raise DimensionError(f"stride must be a positive integer, got {stride}")
    if int(pad) != pad or pad < 0:
        raise DimensionError(f"padding must be a non-negative integer, got {pad}")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0):
    """Cross-correlation of NCHW ``x`` with OIKK ``weight`` and zero padding."""
    _check_geometry(stride, padding)
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d input must be 4-D NCHW, got {x.data.ndim}-D")
    if weight.data.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"conv2d weight must be O x I x K x K, got {weight.shape}")
    _check_dtype(x, weight)
    o, i, k, _ = weight.shape
    if x.shape[1] != i:
        raise DimensionError(f"channel axis: input has {x.shape[1]} channels, weight expects {i}")
    ho = conv_output_size(x.shape[2], k, stride, padding)
    wo = conv_output_size(x.shape[3], k, stride, padding)
    if ho < 1:
        raise DimensionError(f"height axis: output extent {ho} < 1")
    if wo < 1:
        raise DimensionError(f"width axis: output extent {wo} < 1")
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wmat = weight.data.reshape(o, -1)
    out = np.matmul(wmat, cols)
    parents = [x, weight]
    if bias is not None:
        _check_dtype(x, bias)
        if bias.shape != (o,):
            raise DimensionError(f"bias axis: expected shape ({o},), got {bias.shape}")
        out += bias.data.reshape(1, o, 1)
        parents.append(bias)
    out = out.reshape(x.shape[0], o, ho, wo)
    ctx = (cols, x.shape, weight.data, stride, padding, ho, wo)
    return Tensor._from_op(out, "conv2d", parents, ctx)


@_rule("conv2d")
def _conv2d_backward(ctx, g):
    cols, xshape, w, stride, pad, ho, wo = ctx
    o, _, k, _ = w.shape
    gflat = g.reshape(g.shape[0], o, ho * wo)
    gw = np.tensordot(gflat, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    gcols = np.matmul(w.reshape(o, -1).T, gflat)
    gx = _col2im(gcols, xshape, k, stride, pad, ho, wo)
    gb = gflat.sum(axis=(0, 2))
    return gx, gw, gb


def deconv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0,
             output_padding: int = 0):
    """Transposed convolution; ``weight`` is ``(C_in, C_out, K, K)``.

    Forward is exactly the input-gradient of :func:`conv2d` run with the same
    weight, stride and padding, so ``<conv2d(a), b> == <a, deconv2d(b)>``.
    Output extent is ``(H - 1) * stride - 2 * padding + K + output_padding``.
    """
    _check_geometry(stride, padding)
    if x.data.ndim != 4:
        raise DimensionError(f"deconv2d input must be 4-D NCHW, got {x.data.ndim}-D")
    if weight.data.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"deconv2d weight must be I x O x K x K, got {weight.shape}")
    _check_dtype(x, weight)
    cin, cout, k, _ = weight.shape
    if x.shape[1] != cin:
        raise DimensionError(f"channel axis: input has {x.shape[1]} channels, weight expects {cin}")
    if not 0 <= output_padding < stride:
        raise DimensionError(f"output_padding must lie in [0, stride), got {output_padding}")
    n, _, h, w = x.shape
    hout = deconv_output_size(h, k, stride, padding, output_padding)
    wout = deconv_output_size(w, k, stride, padding, output_padding)
    if hout < 1:
        raise DimensionError(f"height axis: output extent {hout} < 1")
    if wout < 1:
        raise DimensionError(f"width axis: output extent {wout} < 1")
    xflat = x.data.reshape(n, cin, h * w)
    wmat = weight.data.reshape(cin, -1)
    cols = np.matmul(wmat.T, xflat)
    out = _col2im(cols, (n, cout, hout, wout), k, stride, padding, h, w)
    parents = [x, weight]
    if bias is not None:
        _check_dtype(x, bias)
        if bias.shape != (cout,):
            raise DimensionError(f"bias axis: expected shape ({cout},), got {bias.shape}")
        out += bias.data.reshape(1, cout, 1, 1)
        parents.append(bias)
    ctx = (xflat, weight.data, stride, padding, h, w)
    return Tensor._from_op(out, "deconv2d", parents, ctx)


@_rule("deconv2d")
def _deconv2d_backward(ctx, g):
    xflat, w, stride, pad, h, wd = ctx
    cin, cout, k, _ = w.shape
    gcols, _, _ = _im2col(g, k, stride, pad)
    gx = np.matmul(w.reshape(cin, -1), gcols).reshape(g.shape[0], cin, h, wd)
    gw = np.tensordot(xflat, gcols, axes=([0, 2], [0, 2])).reshape(w.shape)
    gb = g.sum(axis=(0, 2, 3))
    return gx, gw, gb


# -- backward sweep ----------------------------------------------------------

def _graph_nodes(root: Tensor):
    seen = set()
    nodes = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)
    # creation ids are assigned in execution order
    nodes.sort(key=lambda t: t._id, reverse=True)
    return nodes


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    pending = {id(loss): np.ones_like(loss.data)}
    for node in _graph_nodes(loss):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        node.grad = g
        grads = BACKWARD_RULES[node._op](node._ctx, g)
        for parent, pg in zip(node._parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            if pg.shape != parent.shape:
                pg = pg.reshape(parent.shape)
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


def parameters_zero_grad(params: Sequence[Tensor]):
    for p in params:
        p.zero_grad()
