"""Dense tensors with reverse-mode automatic differentiation.

Only the operations needed by the encoder, decoder and discriminator are
provided. Each op records a closure mapping the output gradient to input
gradients; :func:`backward` walks the recorded graph once in reverse
topological order and then releases it.
"""
from __future__ import annotations

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Backward called on a non-scalar loss or on an already consumed graph."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a gradient."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self):
        backward(self)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward call")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor requiring grad")

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for leaf of shape {node.shape}")
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        in_grads = node._backward(g)
        for p, pg in zip(node._parents, in_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._consumed = True


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw)


def square(x):
    xd = x.data

    def bw(g):
        return (2.0 * xd * g,)

    return _make(xd * xd, (x,), bw)


def log(x):
    xd = x.data

    def bw(g):
        return (g / xd,)

    return _make(np.log(xd), (x,), bw)


def clamp(x, lo, hi):
    xd = x.data
    mask = (xd >= lo) & (xd <= hi)

    def bw(g):
        return (g * mask,)

    return _make(np.clip(xd, lo, hi), (x,), bw)


def relu(x):
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), bw)


def leaky_relu(x, slope=0.2):
    xd = x.data
    scale = np.where(xd > 0, 1.0, slope).astype(xd.dtype)

    def bw(g):
        return (g * scale,)

    return _make(xd * scale, (x,), bw)


def sigmoid(x):
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)

    def bw(g):
        return (g * y * (1.0 - y),)

    return _make(y, (x,), bw)


def activation(x, kind):
    """Apply ``relu``, ``leaky_relu`` (slope 0.2) or ``sigmoid`` elementwise."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, 0.2)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# ------------------------------------------------------------ shape / reduce

def reshape(x, shape):
    old = x.shape

    def bw(g):
        return (g.reshape(old),)

    return _make(x.data.reshape(shape), (x,), bw)


def broadcast_to(x, shape):
    old = x.shape

    def bw(g):
        return (_unbroadcast(g, old),)

    return _make(np.ascontiguousarray(np.broadcast_to(x.data, shape)), (x,), bw)


def concat(tensors, axis=1):
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def sum(x, axis=None, keepdims=False):  # noqa: A001
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(x.dtype, copy=True),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def mean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).astype(x.dtype, copy=True),)

    return _make(np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), bw)


def mse(a, b):
    """Mean squared difference over all elements, as a scalar tensor."""
    if a.shape != b.shape:
        raise DimensionError(f"mse operands differ in shape: {a.shape} vs {b.shape}")
    return mean(square(sub(a, b)))


# --------------------------------------------------------------- dense layers

def linear(x, weight, bias=None):
    """``x[N,D] @ weight[D,M] + bias[M]``."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out += bias.data

    def bw(g):
        gx = g @ wd.T
        gw = xd.T @ g
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


# ----------------------------------------------------------------- convolution

def _pad(xd, padding):
    if padding == 0:
        return np.ascontiguousarray(xd)
    p = padding
    return np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x[N,C,H,W]`` with ``weight[F,C,kh,kw]``."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError("conv2d expects 4-d input and weight")
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if c != cw:
        raise DimensionError(f"conv2d: input has {c} channels, weight expects {cw}")
    if stride < 1 or h + 2 * padding < kh or w + 2 * padding < kw:
        raise DimensionError("conv2d: kernel larger than padded input or bad stride")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    dtype = x.dtype
    xp = _pad(x.data, padding)
    cols = np.empty((n * ho * wo, c * kh * kw), dtype=dtype)
    kernels.im2col(xp, kh, kw, stride, ho, wo, cols)
    wm = weight.data.reshape(f, -1)
    out = cols @ wm.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))

    def bw(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
        gw = (gm.T @ cols).reshape(weight.shape)
        gcols = gm @ wm
        gxp = np.zeros(xp.shape, dtype=dtype)
        kernels.col2im(gcols, kh, kw, stride, ho, wo, gxp)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0, output_padding=0):
    """Adjoint of :func:`conv2d` with respect to its input.

    ``weight`` has shape ``[C_in, C_out, kh, kw]``; the output spatial size is
    ``(H - 1) * stride - 2 * padding + kh + output_padding``.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError("conv_transpose2d expects 4-d input and weight")
    n, c, h, w = x.shape
    cw, f, kh, kw = weight.shape
    if c != cw:
        raise DimensionError(f"conv_transpose2d: input has {c} channels, weight expects {cw}")
    if stride < 1 or not 0 <= output_padding < stride:
        raise DimensionError("conv_transpose2d: output_padding must be smaller than stride")
    ho = (h - 1) * stride - 2 * padding + kh + output_padding
    wo = (w - 1) * stride - 2 * padding + kw + output_padding
    if ho < 1 or wo < 1:
        raise DimensionError("conv_transpose2d: empty output")
    dtype = x.dtype
    # padded canvas large enough for the fold plus output_padding
    hp = ho + 2 * padding
    wp = wo + 2 * padding
    xm = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, c)
    wm = weight.data.reshape(c, -1)
    cols = xm @ wm
    canvas = np.zeros((n, f, hp, wp), dtype=dtype)
    kernels.col2im(cols, kh, kw, stride, h, w, canvas)
    out = np.ascontiguousarray(canvas[:, :, padding:padding + ho, padding:padding + wo])
    if bias is not None:
        out += bias.data.reshape(1, f, 1, 1)

    def bw(g):
        gp = _pad(g, padding)
        gcols = np.empty((n * h * w, f * kh * kw), dtype=dtype)
        kernels.im2col(gp, kh, kw, stride, h, w, gcols)
        gx = (gcols @ wm.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        gw = (xm.T @ gcols).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw)


# ------------------------------------------------------------------ batch norm

class DegenerateBatchError(ValueError):
    """Train-mode batch norm with a single value per channel."""


def batchnorm2d(x, gamma, beta, running_mean, running_var, training,
                momentum=0.1, eps=1e-5):
    """Per-channel batch normalisation of ``x[N,C,H,W]``.

    In training mode batch statistics are used and ``running_mean`` /
    ``running_var`` (numpy arrays) are updated in place; the running variance
    tracks the unbiased estimate. In eval mode only the running statistics
    are used.
    """
    if x.data.ndim != 4:
        raise DimensionError("batchnorm2d expects [N,C,H,W]")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm2d: affine params must have shape ({c},)")
    xd = x.data
    count = n * h * w
    if training:
        if count < 2:
            raise DegenerateBatchError("batch norm in train mode needs at least 2 values per channel")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (count / (count - 1))
    else:
        mu = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def bw(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma.data.reshape(1, c, 1, 1)
        if training:
            gx = (inv.reshape(1, c, 1, 1) / count) * (
                count * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(1, c, 1, 1)
        return gx, gg, gb

    return _make(out, (x, gamma, beta), bw)
