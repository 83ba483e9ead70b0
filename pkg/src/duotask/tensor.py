"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray and, while gradients are enabled, every operation
records a backward closure plus its input tensors. backward() on a scalar
replays the recorded closures in exact reverse creation order and accumulates
gradients into every reachable tensor with requires_grad=True. Gradients keep
accumulating across separately recorded graphs until cleared, which is what
the disjoint training step relies on.

Everything is float64 and define-by-run. No views are handed out: op outputs
own their data.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

_grad_enabled = True
_node_counter = itertools.count()

GELU_K = 0.7978845608028654  # sqrt(2/pi), tanh-approximation constant
GELU_C = 0.044715


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_seq",
                 "_consumed", "_grad_own")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self._seq = next(_node_counter)
        self._consumed = False
        self._grad_own = False

    # ---- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        """A constant tensor sharing nothing with the graph."""
        return Tensor(self.data.copy())

    def __repr__(self):
        grad = "grad" if self.requires_grad else "const"
        return f"Tensor(shape={self.shape}, {grad})"

    # ---- operators -------------------------------------------------------

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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    # ---- backward --------------------------------------------------------

    def backward(self):
        """Backpropagate from this scalar through the recorded graph.

        Gradients accumulate into .grad of every requires_grad tensor that
        contributed. The traversed graph is consumed: a second backward
        through any of its interior nodes raises.
        """
        if self.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("loss does not require grad; nothing to backpropagate")

        nodes = []
        seen = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            if node._backward_fn is None and node._parents:
                if node._consumed:
                    raise RuntimeError(
                        "backward already called on this graph; re-record the forward pass"
                    )
                continue
            if node._backward_fn is not None:
                nodes.append(node)
                stack.extend(node._parents)

        if self._consumed:
            raise RuntimeError("backward already called on this graph; re-record the forward pass")

        nodes.sort(key=lambda n: n._seq, reverse=True)
        self.grad = np.ones_like(self.data) if self.grad is None else self.grad + 1.0
        self._grad_own = True
        for node in nodes:
            g = node.grad
            if g is not None:
                node._backward_fn(g)
            node._backward_fn = None
            node._consumed = True
            if node._parents:
                node.grad = None
        self._consumed = True


def parameter(data):
    """A trainable leaf tensor."""
    return Tensor(data, requires_grad=True)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---- graph plumbing --------------------------------------------------------


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accum(t, g):
    # the incoming buffer may alias another node's grad; never mutate it
    if t.grad is None:
        if g.shape == t.data.shape:
            t.grad = g
            t._grad_own = False
        else:
            t.grad = np.broadcast_to(g, t.data.shape).copy()
            t._grad_own = True
    else:
        t.grad = t.grad + g
        t._grad_own = True


def _accum_slice(t, key, g):
    """Accumulate into a basic-indexed slice of t.grad without allocating a
    full zero buffer per contribution."""
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
        t._grad_own = True
    elif not t._grad_own:
        t.grad = t.grad.copy()
        t._grad_own = True
    t.grad[key] += g


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of trailing-dim broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(
            f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible"
        ) from None


# ---- elementwise ------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("div: divisor contains an exact zero")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(a.data / b.data, (a, b), bw)


def neg(a):
    a = as_tensor(a)

    def bw(g):
        if a.requires_grad:
            _accum(a, -g)

    return _node(-a.data, (a,), bw)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * out_data)

    return _node(out_data, (a,), bw)


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log: input contains non-positive values")

    def bw(g):
        if a.requires_grad:
            _accum(a, g / a.data)

    return _node(np.log(a.data), (a,), bw)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - out_data * out_data))

    return _node(out_data, (a,), bw)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        if a.requires_grad:
            _accum(a, g * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), bw)


def gelu(a):
    """Gaussian error linear unit, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = x * x
    inner *= GELU_C
    inner += 1.0
    inner *= x
    inner *= GELU_K
    t = np.tanh(inner)

    def bw(g):
        if a.requires_grad:
            d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
            _accum(a, g * d)

    out = t + 1.0
    out *= x
    out *= 0.5
    return _node(out, (a,), bw)


def _pow_data(x, p):
    # np.power with a float exponent is an order of magnitude slower than the
    # handful of exponents the models actually use
    if p == 2.0:
        return x * x
    if p == 3.0:
        return x * x * x
    if p == 0.5:
        return np.sqrt(x)
    if p == 1.0:
        return x.copy()
    return np.power(x, p)


def power(a, p):
    """Elementwise a**p for a scalar exponent p.

    At non-differentiable boundary points (e.g. 0**0.5) the subgradient is 0.
    """
    a = as_tensor(a)
    p = float(p)
    if not p.is_integer() and np.any(a.data < 0.0):
        raise ValueError("pow: fractional exponent of a negative base")
    out_data = _pow_data(a.data, p)

    def bw(g):
        if a.requires_grad:
            with np.errstate(divide="ignore", invalid="ignore"):
                factor = p * _pow_data(a.data, p - 1.0)
            factor = np.where(np.isfinite(factor), factor, 0.0)
            _accum(a, g * factor)

    return _node(out_data, (a,), bw)


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("maximum", a, b)
    take_a = a.data >= b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * ~take_a, b.shape))

    return _node(np.where(take_a, a.data, b.data), (a, b), bw)


def logaddexp(a, b):
    """Numerically stable log(exp(a) + exp(b)); -inf entries are exact zeros."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("logaddexp", a, b)
    out_data = np.logaddexp(a.data, b.data)

    def bw(g):
        # exp(x - out) <= 1 always; -inf minus -inf yields nan, which means
        # the branch contributed nothing, so it gets weight 0
        if a.requires_grad:
            with np.errstate(invalid="ignore"):
                wa = np.exp(a.data - out_data)
            _accum(a, _unbroadcast(g * np.nan_to_num(wa, nan=0.0), a.shape))
        if b.requires_grad:
            with np.errstate(invalid="ignore"):
                wb = np.exp(b.data - out_data)
            _accum(b, _unbroadcast(g * np.nan_to_num(wb, nan=0.0), b.shape))

    return _node(out_data, (a, b), bw)


def dropout(a, p, rng, training):
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p <= 0.0:
        return a
    if p >= 1.0:
        raise ValueError(f"dropout probability must be < 1, got {p}")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return mul(a, Tensor(keep))


# ---- shape ops ---------------------------------------------------------------


def reshape(a, *shape):
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.shape
    out_data = a.data.reshape(shape)

    def bw(g):
        if a.requires_grad:
            _accum(a, g.reshape(old))

    return _node(out_data, (a,), bw)


def transpose(a, *axes):
    a = as_tensor(a)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        if a.requires_grad:
            _accum(a, g.transpose(inv))

    return _node(a.data.transpose(axes), (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                _accum(t, piece)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def take(a, key):
    """Basic indexing (ints and slices); the selected cells must be unique."""
    a = as_tensor(a)
    out_data = a.data[key]
    if isinstance(out_data, np.ndarray):
        out_data = out_data.copy()

    def bw(g):
        if a.requires_grad:
            _accum_slice(a, key, g)

    return _node(out_data, (a,), bw)


def gather(a, index, axis):
    """np.take_along_axis as a differentiable op; index is a constant int array."""
    a = as_tensor(a)
    index = np.asarray(index)
    out_data = np.take_along_axis(a.data, index, axis=axis)

    def bw(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ii = list(np.indices(g.shape, sparse=False))
            ii[axis] = np.broadcast_to(index, g.shape)
            np.add.at(ga, tuple(ii), g)
            _accum(a, ga)

    return _node(out_data, (a,), bw)


# ---- reductions --------------------------------------------------------------


def _restore_axes(g, axis, shape, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _check_axis(name, axis, ndim):
    if axis is not None:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        for ax in axes:
            if not -ndim <= ax < ndim:
                raise ValueError(f"{name}: axis {ax} out of range for rank {ndim}")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    _check_axis("sum", axis, a.ndim)

    def bw(g):
        if a.requires_grad:
            _accum(a, _restore_axes(g, axis, a.shape, keepdims).copy())

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    _check_axis("mean", axis, a.ndim)
    n = a.size if axis is None else a.shape[axis]
    if n == 0:
        raise ValueError("mean over an empty axis")

    def bw(g):
        if a.requires_grad:
            _accum(a, _restore_axes(g, axis, a.shape, keepdims) / n)

    return _node(a.data.mean(axis=axis, keepdims=keepdims), (a,), bw)


def tmax(a, axis=None, keepdims=False):
    """Max reduction; ties share the gradient equally."""
    a = as_tensor(a)
    _check_axis("max", axis, a.ndim)
    out_data = a.data.max(axis=axis, keepdims=keepdims)

    def bw(g):
        if a.requires_grad:
            full = _restore_axes(out_data, axis, a.shape, keepdims)
            mask = (a.data == full).astype(np.float64)
            counts = mask.sum(axis=axis, keepdims=True) if axis is not None else mask.sum()
            _accum(a, _restore_axes(g, axis, a.shape, keepdims) * mask / counts)

    return _node(out_data, (a,), bw)


def argmax(a, axis=-1):
    """Plain argmax over the data; not differentiable, returns an int ndarray."""
    a = as_tensor(a)
    return a.data.argmax(axis=axis)


def softmax(a, axis=-1):
    a = as_tensor(a)
    _check_axis("softmax", axis, a.ndim)
    y = a.data - a.data.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)

    def bw(g):
        if a.requires_grad:
            dot = np.einsum("...i,...i->...", g, y)[..., None] if axis in (-1, a.ndim - 1) \
                else (g * y).sum(axis=axis, keepdims=True)
            _accum(a, y * (g - dot))

    return _node(y, (a,), bw)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    _check_axis("log_softmax", axis, a.ndim)
    out_data = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(out_data)
    out_data -= np.log(e.sum(axis=axis, keepdims=True))

    def bw(g):
        if a.requires_grad:
            _accum(a, g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

    return _node(out_data, (a,), bw)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis with learnable scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, _unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            _accum(beta, _unbroadcast(g, beta.shape))
        if x.requires_grad:
            dxhat = g * gamma.data
            term = dxhat.mean(axis=-1, keepdims=True) + xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, (dxhat - term) * inv)

    del d
    return _node(out_data, (x, gamma, beta), bw)


def l2_normalize(x, axis=-1, eps=1e-12):
    """x / max(||x||2, eps) along `axis`."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    n_used = np.maximum(norm, eps)
    y = x.data / n_used

    def bw(g):
        if x.requires_grad:
            above = (norm > eps).astype(np.float64)
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accum(x, (g - above * y * dot) / n_used)

    return _node(y, (x,), bw)


# ---- matmul and conv ---------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul requires 2-D or batched 3-D tensors, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(b, _unbroadcast(gb, b.shape))

    return _node(out_data, (a, b), bw)


def conv1d(x, w, bias=None, stride=1, padding=0, groups=1):
    """1-D convolution (cross-correlation) with stride, zero padding and groups.

    x: (C_in, T) or (B, C_in, T); w: (C_out, C_in/groups, K); bias: (C_out,).
    Output time dimension is floor((T + 2*padding - K) / stride) + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w.ndim != 3:
        raise ValueError(f"conv1d: expected x (B,C,T) and w (C_out,C_in/g,K), got {x.shape}, {w.shape}")
    B, c_in, T = xd.shape
    c_out, c_in_g, K = w.shape
    if c_in % groups or c_out % groups:
        raise ValueError(f"conv1d: channels ({c_in} in, {c_out} out) not divisible by groups={groups}")
    if c_in_g != c_in // groups:
        raise ValueError(f"conv1d: weight expects {c_in_g} channels/group, input supplies {c_in // groups}")
    if T + 2 * padding < K:
        raise ValueError(f"conv1d: kernel {K} larger than padded input {T + 2 * padding}")

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    Tp = xp.shape[-1]
    t_out = (Tp - K) // stride + 1
    # (B, C_in, t_out, K) windows; strided view, no copy
    windows = np.lib.stride_tricks.sliding_window_view(xp, K, axis=-1)[:, :, ::stride, :]

    cg_in = c_in // groups
    cg_out = c_out // groups
    out = np.empty((B, c_out, t_out))
    cols = []
    for gidx in range(groups):
        wg = w.data[gidx * cg_out:(gidx + 1) * cg_out].reshape(cg_out, cg_in * K)
        col = windows[:, gidx * cg_in:(gidx + 1) * cg_in].transpose(0, 2, 1, 3).reshape(B * t_out, cg_in * K)
        cols.append(col)
        out[:, gidx * cg_out:(gidx + 1) * cg_out] = (col @ wg.T).reshape(B, t_out, cg_out).transpose(0, 2, 1)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[None, :, None]

    parents = (x, w) if bias is None else (x, w, bias)

    def bw(g):
        if squeeze:
            g3 = g[None] if g.ndim == 2 else g
        else:
            g3 = g
        if bias is not None and bias.requires_grad:
            _accum(bias, g3.sum(axis=(0, 2)))
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for gi in range(groups):
                gg = g3[:, gi * cg_out:(gi + 1) * cg_out].transpose(0, 2, 1).reshape(B * t_out, cg_out)
                gw[gi * cg_out:(gi + 1) * cg_out] = (gg.T @ cols[gi]).reshape(cg_out, cg_in, K)
            _accum(w, gw)
        if x.requires_grad:
            gxp = np.zeros((B, c_in, Tp))
            for gi in range(groups):
                gg = g3[:, gi * cg_out:(gi + 1) * cg_out].transpose(0, 2, 1).reshape(B * t_out, cg_out)
                wg = w.data[gi * cg_out:(gi + 1) * cg_out].reshape(cg_out, cg_in * K)
                gcol = (gg @ wg).reshape(B, t_out, cg_in, K).transpose(0, 2, 1, 3)
                tgt = gxp[:, gi * cg_in:(gi + 1) * cg_in]
                for k in range(K):
                    tgt[:, :, k:k + stride * t_out:stride] += gcol[:, :, :, k]
            gx = gxp[:, :, padding:Tp - padding] if padding else gxp
            _accum(x, gx[0] if squeeze else gx)

    out_final = out[0] if squeeze else out
    return _node(out_final, parents, bw)


def conv1d_out_len(T, kernel, stride, padding):
    """Output length of conv1d for one layer; negative means no frame fits."""
    return (T + 2 * padding - kernel) // stride + 1


# ---- gradient oracle -----------------------------------------------------------


def finite_diff_check(f, params, eps=1e-5):
    """Max relative error between f's autodiff gradient and central differences.

    f is a deterministic zero-argument callable returning a scalar Tensor that
    depends on `params` (a list of requires_grad tensors). Relative error per
    element is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.grad = None
    out = f()
    if not isinstance(out, Tensor) or out.size != 1:
        raise ValueError("f must return a scalar Tensor")
    if not np.isfinite(out.data).all():
        raise ValueError("f returned a non-finite value")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for p, ana in zip(params, analytic):
            flat = p.data.reshape(-1)
            aflat = ana.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = f().item()
                flat[i] = orig - eps
                fm = f().item()
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise ValueError("f returned a non-finite value during perturbation")
                num = (fp - fm) / (2.0 * eps)
                rel = abs(aflat[i] - num) / max(abs(aflat[i]), abs(num), 1e-8)
                worst = max(worst, rel)
    return worst
