"""Dense-tensor reverse-mode autodiff on float64 numpy arrays.

Scope is deliberately small: the ops the separation and suppression models
need, each with a hand-written adjoint. Shapes are static per call, there is
no broadcasting except scalar-tensor, and gradients are checked against
central finite differences in the test suite.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels


class GraphError(ValueError):
    """Raised for shape mismatches or illegal graph operations."""


_grad_enabled = True


class no_grad:
    """Context manager disabling graph construction (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise GraphError("tensor initialized with non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data, parents, backward_fn, op):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward_fn = None
        return out

    # -- basic protocol --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- backward ---------------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("backward on a tensor with no graph attached")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            fn = node._backward_fn
            if fn is None or node.grad is None:
                continue
            grads = fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.data.shape:
                    raise GraphError(
                        f"adjoint shape mismatch in {node._op}: {g.shape} vs {parent.data.shape}"
                    )
                # accumulation is never in-place, so aliased adjoints stay safe
                parent.grad = g if parent.grad is None else parent.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise GraphError(f"non-finite values produced by {op}")


# -- elementwise arithmetic ------------------------------------------------------


def _binary_shapes(a, b, op):
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise GraphError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ (only scalar broadcast allowed)")


def _reduce_to(grad, shape):
    # collapse a scalar-broadcast gradient back to the scalar operand
    if grad.shape == shape:
        return grad
    return np.sum(grad).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")

    def backward(g):
        return (_reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape))

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")

    def backward(g):
        return (_reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape))

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape))

    return Tensor._result(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    _check_finite(out, "div")

    def backward(g):
        return (_reduce_to(g / bd, ad.shape), _reduce_to(-g * ad / (bd * bd), bd.shape))

    return Tensor._result(out, (a, b), backward, "div")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return Tensor._result(y, (x,), backward, "tanh")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        return (g * y * (1.0 - y),)

    return Tensor._result(y, (x,), backward, "sigmoid")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor._result(np.where(mask, x.data, 0.0), (x,), backward, "relu")


def prelu(x, slope) -> Tensor:
    """PReLU with a learnable scalar negative slope."""
    x, slope = as_tensor(x), as_tensor(slope)
    if slope.data.size != 1:
        raise GraphError("prelu slope must be a single learnable scalar")
    pos = x.data > 0
    s = float(slope.data)
    neg = np.where(pos, 0.0, x.data)

    def backward(g):
        gx = g * np.where(pos, 1.0, s)
        gs = np.sum(g * neg).reshape(slope.data.shape)
        return (gx, gs)

    return Tensor._result(np.where(pos, x.data, s * x.data), (x, slope), backward, "prelu")


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    _check_finite(y, "exp")

    def backward(g):
        return (g * y,)

    return Tensor._result(y, (x,), backward, "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise GraphError("log requires strictly positive input")
    xd = x.data

    def backward(g):
        return (g / xd,)

    return Tensor._result(np.log(xd), (x,), backward, "log")


def absolute(x) -> Tensor:
    x = as_tensor(x)
    sign = np.sign(x.data)

    def backward(g):
        return (g * sign,)

    return Tensor._result(np.abs(x.data), (x,), backward, "abs")


def clamp(x, lo: float, hi: float) -> Tensor:
    """Hard clamp; gradient is zero outside [lo, hi]."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        return (g * inside,)

    return Tensor._result(np.clip(x.data, lo, hi), (x,), backward, "clamp")


# -- shape ops --------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.data.shape

    def backward(g):
        return (g.reshape(old),)

    return Tensor._result(np.ascontiguousarray(x.data.reshape(shape)), (x,), backward, "reshape")


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return Tensor._result(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward, "transpose")


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries from `start` along `axis`."""
    x = as_tensor(x)
    if start < 0 or start + length > x.data.shape[axis]:
        raise GraphError(f"narrow out of range on axis {axis}: [{start}, {start + length}) vs {x.data.shape}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    full_shape = x.data.shape

    def backward(g):
        out = np.zeros(full_shape)
        out[idx] = g
        return (out,)

    return Tensor._result(np.ascontiguousarray(x.data[idx]), (x,), backward, "narrow")


def pad_last(x, before: int, after: int) -> Tensor:
    """Zero-pad the last axis."""
    x = as_tensor(x)
    if before < 0 or after < 0:
        raise GraphError("pad_last amounts must be non-negative")
    width = [(0, 0)] * (x.data.ndim - 1) + [(before, after)]
    T = x.data.shape[-1]

    def backward(g):
        return (np.ascontiguousarray(g[..., before:before + T]),)

    return Tensor._result(np.pad(x.data, width), (x,), backward, "pad_last")


# -- reductions --------------------------------------------------------------------


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.data.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g.reshape(()), shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return Tensor._result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward, "sum")


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.data.shape
    if axis is None:
        count = x.data.size
    else:
        count = shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g.reshape(()), shape).copy() / count,)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy() / count,)

    return Tensor._result(np.mean(x.data, axis=axis, keepdims=keepdims), (x,), backward, "mean")


# -- linear algebra -----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise GraphError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise GraphError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return (g @ bd.T, ad.T @ g)

    return Tensor._result(ad @ bd, (a, b), backward, "matmul")


# -- convolution ---------------------------------------------------------------------


def conv1d(x, w, b, stride: int = 1, padding: int = 0) -> Tensor:
    """Batched 1-D convolution (cross-correlation): x [B,Cin,T] -> [B,Cout,oT]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise GraphError(f"conv1d expects x[B,C,T], w[O,C,K]; got {x.data.shape}, {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise GraphError(f"conv1d channel mismatch: x has {x.data.shape[1]}, w expects {w.data.shape[1]}")
    out, cols = kernels.conv1d_forward(x.data, w.data, b.data, stride, padding)
    xd, wd = x.data, w.data

    def backward(g):
        dx, dw, db = kernels.conv1d_backward(g, xd, wd, cols, stride, padding)
        return (dx, dw, db)

    return Tensor._result(out, (x, w, b), backward, "conv1d")


def conv_transpose1d(x, w, b, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 1-D convolution: x [B,Cin,T], w [Cin,Cout,K] -> [B,Cout,(T-1)s+K-2p]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise GraphError(f"conv_transpose1d expects x[B,C,T], w[C,O,K]; got {x.data.shape}, {w.data.shape}")
    if x.data.shape[1] != w.data.shape[0]:
        raise GraphError(f"conv_transpose1d channel mismatch: x has {x.data.shape[1]}, w expects {w.data.shape[0]}")
    out = kernels.conv_transpose1d_forward(x.data, w.data, b.data, stride, padding)
    xd, wd = x.data, w.data

    def backward(g):
        dx, dw, db = kernels.conv_transpose1d_backward(g, xd, wd, stride, padding)
        return (dx, dw, db)

    return Tensor._result(out, (x, w, b), backward, "conv_transpose1d")


# -- chunking (unfold / fold) -----------------------------------------------------------


def unfold(x, size: int, hop: int) -> Tensor:
    """Window the last axis: [..., T] -> [..., n, size] with the given hop."""
    x = as_tensor(x)
    T = x.data.shape[-1]
    if T < size or (T - size) % hop != 0:
        raise GraphError(f"unfold misalignment: T={T}, size={size}, hop={hop}")
    n = (T - size) // hop + 1
    out = np.empty(x.data.shape[:-1] + (n, size))
    for i in range(n):
        out[..., i, :] = x.data[..., i * hop:i * hop + size]

    def backward(g):
        dx = np.zeros(x.data.shape)
        for i in range(n):
            dx[..., i * hop:i * hop + size] += g[..., i, :]
        return (dx,)

    return Tensor._result(out, (x,), backward, "unfold")


def fold(chunks, total: int, hop: int) -> Tensor:
    """Overlap-add the adjoint of unfold: [..., n, size] -> [..., total]."""
    chunks = as_tensor(chunks)
    n, size = chunks.data.shape[-2:]
    if (n - 1) * hop + size != total:
        raise GraphError(f"fold misalignment: n={n}, size={size}, hop={hop}, total={total}")
    out = np.zeros(chunks.data.shape[:-2] + (total,))
    for i in range(n):
        out[..., i * hop:i * hop + size] += chunks.data[..., i, :]

    def backward(g):
        dc = np.empty(chunks.data.shape)
        for i in range(n):
            dc[..., i, :] = g[..., i * hop:i * hop + size]
        return (dc,)

    return Tensor._result(out, (chunks,), backward, "fold")


# -- normalization ------------------------------------------------------------------------


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then apply learnable gain and bias [F]."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    F = x.data.shape[-1]
    if gain.data.shape != (F,) or bias.data.shape != (F,):
        raise GraphError(f"layer_norm gain/bias must have shape ({F},)")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        dxhat = g * gd
        m1 = np.mean(dxhat, axis=-1, keepdims=True)
        m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        lead = tuple(range(g.ndim - 1))
        return (dx, np.sum(g * xhat, axis=lead), np.sum(g, axis=lead))

    return Tensor._result(xhat * gd + bias.data, (x, gain, bias), backward, "layer_norm")


# -- recurrent ------------------------------------------------------------------------------


def gru_seq(x, wi, bi, wh, bh, reverse: bool = False) -> Tensor:
    """Run a GRU over a [S, R, F] sequence; returns hidden states [S, R, H].

    The input projection is a single GEMM; the sequential recurrence runs in
    the compiled kernel when available. `reverse=True` scans right-to-left
    (states are returned aligned with the input order).
    """
    x, wi, bi, wh, bh = (as_tensor(t) for t in (x, wi, bi, wh, bh))
    if x.data.ndim != 3:
        raise GraphError(f"gru_seq expects [S,R,F], got {x.data.shape}")
    S, R, F = x.data.shape
    H = wh.data.shape[0]
    if wi.data.shape != (F, 3 * H) or wh.data.shape != (H, 3 * H):
        raise GraphError(f"gru_seq weight shapes: wi {wi.data.shape}, wh {wh.data.shape}, F={F}, H={H}")

    xd = x.data[::-1] if reverse else x.data
    xp = (xd.reshape(S * R, F) @ wi.data + bi.data).reshape(S, R, 3 * H)
    h0 = np.zeros((R, H))
    h_all, cache = kernels.gru_forward(xp, wh.data, bh.data, h0)
    out = h_all[1:][::-1].copy() if reverse else h_all[1:].copy()
    xd_c = xd

    def backward(g):
        gg = np.ascontiguousarray(g[::-1]) if reverse else np.ascontiguousarray(g)
        dxp, dwh, dbh, _dh0 = kernels.gru_backward(gg, h_all, cache, wh.data)
        flat_x = xd_c.reshape(S * R, F)
        flat_d = dxp.reshape(S * R, 3 * H)
        dwi = flat_x.T @ flat_d
        dbi = flat_d.sum(axis=0)
        dx = (flat_d @ wi.data.T).reshape(S, R, F)
        if reverse:
            dx = np.ascontiguousarray(dx[::-1])
        return (dx, dwi, dbi, dwh, dbh)

    return Tensor._result(out, (x, wi, bi, wh, bh), backward, "gru_seq")


def gru_cell(x, h, wi, bi, wh, bh) -> Tensor:
    """Single GRU step: x [R, F], h [R, H] -> new hidden [R, H]."""
    x, h, wi, bi, wh, bh = (as_tensor(t) for t in (x, h, wi, bi, wh, bh))
    R, F = x.data.shape
    H = wh.data.shape[0]
    xp = (x.data @ wi.data + bi.data).reshape(1, R, 3 * H)
    h_all, cache = kernels.gru_forward(xp, wh.data, bh.data, h.data)

    def backward(g):
        dxp, dwh, dbh, dh0 = kernels.gru_backward(g.reshape(1, R, H), h_all, cache, wh.data)
        flat_d = dxp.reshape(R, 3 * H)
        return (flat_d @ wi.data.T, x.data.T @ flat_d, flat_d.sum(axis=0), dh0, dwh, dbh)

    return Tensor._result(h_all[1].copy(), (x, h, wi, bi, wh, bh), backward, "gru_cell")


# -- convenience -----------------------------------------------------------------------------


def log10(x) -> Tensor:
    return mul(log(x), 1.0 / math.log(10.0))
