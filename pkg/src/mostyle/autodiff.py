"""Dense tensors with reverse-mode automatic differentiation.

Small tape-based engine backed by numpy. It supports exactly the operations
the style-transfer network needs; there is no general broadcasting, no views,
no GPU. Gradients are checked against central finite differences (see
``grad_check``). Tensors that do not require grad are plain immutable values.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class DimensionError(ValueError):
    """Shape mismatch, reported with the op name and offending axes."""


class ContractError(ValueError):
    """An operation was called outside its contract."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_grad_owned")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._grad_owned = False
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None
        self._grad_owned = False

    def _accumulate(self, g: np.ndarray) -> None:
        # first contribution is adopted by reference; a second one forces a
        # private buffer so callers' arrays are never mutated
        if self.grad is None:
            self.grad = g
            self._grad_owned = False
        elif not self._grad_owned:
            self.grad = self.grad + g
            self._grad_owned = True
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; everything routes through the module-level ops
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, Tensor(np.asarray(-1.0, dtype=self.dtype)))


class Parameter:
    """A named, trainable tensor."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, data):
        self.name = name
        self.tensor = data if isinstance(data, Tensor) else Tensor(data, requires_grad=True)
        self.tensor.requires_grad = True

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value) -> None:
        value = np.asarray(value)
        if value.dtype not in (np.float32, np.float64):
            value = value.astype(self.tensor.data.dtype)
        self.tensor.data = value

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcastable(op: str, a: Tensor, b: Tensor) -> None:
    for ax, (m, n) in enumerate(zip(reversed(a.shape), reversed(b.shape))):
        if m != n and m != 1 and n != 1:
            raise DimensionError(
                f"{op}: shapes {a.shape} and {b.shape} differ on axis {-1 - ax}"
            )


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable("add", a, b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, -b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable("mul", a, b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def abs_(x: Tensor) -> Tensor:
    data = np.abs(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * np.sign(x.data))

    return _make(data, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.asarray(x.data.mean(), dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.full(x.shape, float(g) / n, dtype=x.dtype))

    return _make(data, (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data >= 0
    data = np.where(mask, x.data, slope * x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.where(mask, g, slope * g))

    return _make(data, (x,), backward)


def softmax_over_axis(x: Tensor, axis: int) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * data).sum(axis=axis, keepdims=True)
            x._accumulate(data * (g - inner))

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor, transpose_a: bool = False, transpose_b: bool = False) -> Tensor:
    """Batched matrix product on the last two axes; leading axes must match."""
    ad = np.swapaxes(a.data, -1, -2) if transpose_a else a.data
    bd = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul: inner axes {ad.shape} x {bd.shape} do not agree")
    data = ad @ bd

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
            if transpose_a:
                ga = np.swapaxes(ga, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(ad, -1, -2) @ g
            if transpose_b:
                gb = np.swapaxes(gb, -1, -2)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b on the trailing axis: (..., k) x (k, m) -> (..., m)."""
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input axis {x.shape[-1]} != weight rows {w.shape[0]}")
    data = x.data @ w.data
    if b is not None:
        data = data + b.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            gf = g.reshape(-1, g.shape[-1])
            xf = x.data.reshape(-1, x.shape[-1])
            w._accumulate(xf.T @ gf)
        if b is not None and b.requires_grad:
            b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, parents, backward)


def gather_weighted_sum(x: Tensor, weights: np.ndarray, axis: int = -2) -> Tensor:
    """Apply a fixed (non-learned) linear map along one axis.

    out[..., o, ...] = sum_u weights[o, u] * x[..., u, ...] on ``axis``.
    Covers neighbor averaging, group pooling, broadcast unpooling and
    temporal resampling, all of which are constant matrices.
    """
    weights = np.asarray(weights, dtype=x.dtype)
    axis = axis % x.ndim
    if weights.shape[1] != x.shape[axis]:
        raise DimensionError(
            f"gather_weighted_sum: matrix columns {weights.shape[1]} != axis length {x.shape[axis]} (axis {axis})"
        )
    if axis == x.ndim - 2:
        data = weights @ x.data

        def backward(g):
            if x.requires_grad:
                x._accumulate(weights.T @ g)

        return _make(data, (x,), backward)

    if axis == x.ndim - 3:
        lead = x.shape[:-3]
        t, v, c = x.shape[-3:]
        flat = x.data.reshape(lead + (t, v * c))
        data = (weights @ flat).reshape(lead + (weights.shape[0], v, c))

        def backward(g):
            if x.requires_grad:
                gf = g.reshape(lead + (weights.shape[0], v * c))
                x._accumulate((weights.T @ gf).reshape(x.shape))

        return _make(data, (x,), backward)

    moved = np.moveaxis(x.data, axis, -1)
    out = moved @ weights.T
    data = np.moveaxis(out, -1, axis)

    def backward(g):
        if x.requires_grad:
            gm = np.moveaxis(g, axis, -1)
            gx = gm @ weights
            x._accumulate(np.moveaxis(gx, -1, axis))

    return _make(np.ascontiguousarray(data), (x,), backward)


def temporal_conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """1D convolution along the time axis (-3), stride 1, replicate padding.

    x: (..., T, V, C_in), w: (k, C_in, C_out) with k odd. Output has the same
    number of frames as the input. Computed as a sum of time-shifted matrix
    products, which avoids materializing an im2col buffer.
    """
    k, c_in, c_out = w.shape
    if k % 2 != 1:
        raise ContractError(f"temporal_conv1d: kernel size {k} must be odd")
    if x.shape[-1] != c_in:
        raise DimensionError(f"temporal_conv1d: input channels {x.shape[-1]} != kernel {c_in}")
    t = x.shape[-3]
    half = (k - 1) // 2
    if half:
        first = np.broadcast_to(x.data[..., 0:1, :, :], x.shape[:-3] + (half,) + x.shape[-2:])
        last = np.broadcast_to(x.data[..., t - 1 : t, :, :], x.shape[:-3] + (half,) + x.shape[-2:])
        xp = np.concatenate([first, x.data, last], axis=-3)
    else:
        xp = x.data
    data = xp[..., 0:t, :, :] @ w.data[0]
    for j in range(1, k):
        data += xp[..., j : j + t, :, :] @ w.data[j]
    if b is not None:
        data += b.data

    def backward(g):
        if b is not None and b.requires_grad:
            b._accumulate(g.reshape(-1, c_out).sum(axis=0))
        if w.requires_grad:
            gf = g.reshape(-1, c_out)
            gw = np.empty((k, c_in, c_out), dtype=x.dtype)
            for j in range(k):
                gw[j] = xp[..., j : j + t, :, :].reshape(-1, c_in).T @ gf
            w._accumulate(gw)
        if x.requires_grad:
            gx = np.zeros(xp.shape, dtype=x.dtype)
            for j in range(k):
                gx[..., j : j + t, :, :] += g @ w.data[j].T
            # fold replicate-padding gradients back onto the edge frames
            if half:
                gx[..., half, :, :] += gx[..., :half, :, :].sum(axis=-3)
                gx[..., t + half - 1, :, :] += gx[..., t + half :, :, :].sum(axis=-3)
            x._accumulate(gx[..., half : half + t, :, :])

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, parents, backward)


# ---------------------------------------------------------------------------
# normalization and statistics


def channel_stats(x: Tensor, axes: tuple[int, ...], eps: float = 0.0) -> Tensor:
    """Per-channel mean and std over ``axes``, stacked on a new axis -2.

    For x of shape (..., T, V, C) with axes (-3, -2) the result is (..., 2, C):
    row 0 the mean, row 1 sqrt(var + eps).
    """
    axes = tuple(a % x.ndim for a in axes)
    n = int(np.prod([x.shape[a] for a in axes]))
    mean = x.data.mean(axis=axes, keepdims=True)
    var = ((x.data - mean) ** 2).mean(axis=axes, keepdims=True)
    std = np.sqrt(var + eps)
    sq = tuple(sorted(axes))
    m = np.squeeze(mean, axis=sq)
    s = np.squeeze(std, axis=sq)
    data = np.stack([m, s], axis=-2)

    def backward(g):
        if not x.requires_grad:
            return
        gm = g[..., 0, :]
        gs = g[..., 1, :]
        shape = list(x.shape)
        for a in axes:
            shape[a] = 1
        gm = gm.reshape(shape)
        gs = gs.reshape(shape)
        safe_std = np.where(std > 0, std, 1.0)
        gx = gm / n + gs * (x.data - mean) / (n * safe_std)
        x._accumulate(np.broadcast_to(gx, x.shape).copy() if gx.shape != x.shape else gx)

    return _make(data, (x,), backward)


def instance_norm(x: Tensor, axes: tuple[int, ...], eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) with statistics over ``axes`` per channel."""
    axes = tuple(a % x.ndim for a in axes)
    n = int(np.prod([x.shape[a] for a in axes]))
    mean = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mean
    var = (centered**2).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = centered * inv

    def backward(g):
        if x.requires_grad:
            gmean = g.mean(axis=axes, keepdims=True)
            gdot = (g * data).mean(axis=axes, keepdims=True)
            x._accumulate(inv * (g - gmean - data * gdot))

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# structural ops


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.shape))

    return _make(data, (x,), backward)


def concat_axis(tensors: Sequence[Tensor], axis: int) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(data, tuple(tensors), backward)


def take(x: Tensor, indices, axis: int = -2, assume_unique: bool = False) -> Tensor:
    """Slice along one axis; ``indices`` is a python slice or an index array."""
    axis = axis % x.ndim
    sel = [slice(None)] * x.ndim
    unique = True
    if isinstance(indices, slice):
        sel[axis] = indices
        data = x.data[tuple(sel)]
    else:
        indices = np.asarray(indices, dtype=np.intp)
        unique = assume_unique or len(np.unique(indices)) == len(indices)
        data = np.take(x.data, indices, axis=axis)

    def backward(g):
        if x.requires_grad:
            gx = np.zeros(x.shape, dtype=x.dtype)
            if isinstance(indices, slice):
                gx[tuple(sel)] = g
            elif unique:
                np.moveaxis(gx, axis, 0)[indices] = np.moveaxis(g, axis, 0)
            else:
                np.add.at(np.moveaxis(gx, axis, 0), indices, np.moveaxis(g, axis, 0))
            x._accumulate(gx)

    return _make(data, (x,), backward)


def scatter_sum(parts: Sequence[tuple[Tensor, np.ndarray]], axis_len: int, axis: int = -2) -> Tensor:
    """Assemble a tensor from (part, index-array) pairs along one axis.

    Indices must be disjoint across parts; unassigned rows are zero. The exact
    inverse of ``take`` with index arrays, used to reassemble per-part outputs.
    """
    first = parts[0][0]
    axis = axis % first.ndim
    shape = list(first.shape)
    shape[axis] = axis_len
    data = np.zeros(shape, dtype=first.dtype)
    moved = np.moveaxis(data, axis, 0)
    for t, idx in parts:
        moved[np.asarray(idx, dtype=np.intp)] = np.moveaxis(t.data, axis, 0)

    def backward(g):
        gm = np.moveaxis(g, axis, 0)
        for t, idx in parts:
            if t.requires_grad:
                t._accumulate(np.moveaxis(gm[np.asarray(idx, dtype=np.intp)], 0, axis))

    return _make(data, tuple(t for t, _ in parts), backward)


def avg_pool_groups(x: Tensor, groups: Sequence[Sequence[int]], axis: int = -2) -> Tensor:
    """Average within index groups along one axis (vertex-group pooling)."""
    n_in = x.shape[axis % x.ndim]
    m = np.zeros((len(groups), n_in))
    for o, grp in enumerate(groups):
        m[o, list(grp)] = 1.0 / len(grp)
    return gather_weighted_sum(x, m, axis=axis)


def broadcast_unpool(x: Tensor, groups: Sequence[Sequence[int]], n_fine: int, axis: int = -2) -> Tensor:
    """Copy each coarse value to all members of its group along one axis."""
    m = np.zeros((n_fine, len(groups)))
    for o, grp in enumerate(groups):
        m[list(grp), o] = 1.0
    return gather_weighted_sum(x, m, axis=axis)


# ---------------------------------------------------------------------------
# tape evaluation


_OP_TABLE: dict[str, Callable] = {
    "add": lambda inputs, attrs: add(*inputs),
    "mul": lambda inputs, attrs: mul(*inputs),
    "matmul": lambda inputs, attrs: matmul(*inputs, **attrs),
    "gather_weighted_sum": lambda inputs, attrs: gather_weighted_sum(inputs[0], **attrs),
    "temporal_conv1d": lambda inputs, attrs: temporal_conv1d(*inputs),
    "linear": lambda inputs, attrs: linear(*inputs),
    "leaky_relu": lambda inputs, attrs: leaky_relu(inputs[0], **attrs),
    "softmax_over_axis": lambda inputs, attrs: softmax_over_axis(inputs[0], **attrs),
    "channel_stats": lambda inputs, attrs: channel_stats(inputs[0], **attrs),
    "instance_norm": lambda inputs, attrs: instance_norm(inputs[0], **attrs),
    "avg_pool_groups": lambda inputs, attrs: avg_pool_groups(inputs[0], **attrs),
    "broadcast_unpool": lambda inputs, attrs: broadcast_unpool(inputs[0], **attrs),
    "reshape": lambda inputs, attrs: reshape(inputs[0], **attrs),
    "concat_axis": lambda inputs, attrs: concat_axis(inputs, **attrs),
    "mean_all": lambda inputs, attrs: mean_all(inputs[0]),
    "abs": lambda inputs, attrs: abs_(inputs[0]),
    "slice": lambda inputs, attrs: take(inputs[0], **attrs),
}


def forward_op(kind: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    """Uniform dispatch over the supported op kinds."""
    if kind not in _OP_TABLE:
        raise ContractError(f"unknown op kind {kind!r}")
    return _OP_TABLE[kind](list(inputs), attrs or {})


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate grads of every reachable grad-requiring leaf with d loss / d leaf.

    Leaf grads accumulate across calls; intermediate node grads are scratch
    space reset on every call.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    for node in order:
        if node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._parents:
            node.grad = None


def grad_check(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be scalar-valued and deterministic; evaluated in the dtype of
    ``x`` (use 64-bit). Error metric per element:
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    x = np.asarray(x, dtype=DEFAULT_DTYPE)
    xt = Tensor(x, requires_grad=True)
    out = f(xt)
    backward(out)
    analytic = xt.grad.copy() if xt.grad is not None else np.zeros_like(x)

    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(Tensor(x)).data)
            flat[i] = orig - eps
            lo = float(f(Tensor(x)).data)
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2 * eps)
    if not (np.isfinite(analytic).all() and np.isfinite(numeric).all()):
        raise NumericError("grad_check: non-finite values in gradients")
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
