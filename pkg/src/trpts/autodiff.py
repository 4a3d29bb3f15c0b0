"""Dense tensors with reverse-mode automatic differentiation.

Small on purpose: contiguous numpy storage, one adjoint per primitive,
and a recorded execution order that is replayed exactly once in reverse.
New leaves default to float32; switch to float64 (``using_dtype``) for
gradient verification runs.

Broadcasting is restricted to leading batch axes: the smaller operand's
shape must be a suffix of the larger one's (a ``[d]`` bias may add onto
``[B, T, d]`` activations). Every other mismatch raises ShapeError.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .errors import InputError, NumericError, ShapeError, UsageError

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True
_EXEC_COUNTER = 0

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def set_default_dtype(dtype) -> None:
    """Set the dtype of newly created leaves (float32 or float64)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise InputError(f"unsupported default dtype {dt}; use float32 or float64")
    _DEFAULT_DTYPE = dt


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


@contextmanager
def using_dtype(dtype):
    """Temporarily switch the default leaf dtype (float64 for verification)."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _next_order() -> int:
    global _EXEC_COUNTER
    _EXEC_COUNTER += 1
    return _EXEC_COUNTER


class Tensor:
    """N-dimensional array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_order")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._order = _next_order()

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's values, cut off from the graph."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    # Convenience methods; the module-level functions carry the contracts.
    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis) -> "Tensor":
        return mean(self, axis)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    """Create a leaf tensor."""
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    """Create a trainable leaf tensor."""
    return Tensor(data, requires_grad=True, dtype=dtype)


def zero_grads(params) -> None:
    """Explicitly clear gradients; backward always accumulates (+=)."""
    for p in params:
        p.zero_grad()


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def _make(out_data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Wrap an op result; record it only when some input is in the graph."""
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=track, dtype=out_data.dtype)
    if track:
        out._parents = parents
        out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Accumulate dloss/dt into .grad of every tensor reachable from loss.

    Each recorded operation's adjoint runs exactly once, in reverse
    execution order. Gradients add onto existing .grad buffers, so two
    backward calls without zero_grad double the result.
    """
    if loss.shape != ():
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    nodes = []
    seen = {id(loss)}
    stack = [loss]
    while stack:
        node = stack.pop()
        nodes.append(node)
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                seen.add(id(parent))
                stack.append(parent)
    nodes.sort(key=lambda t: t._order, reverse=True)

    # Per-pass accumulator keeps repeated backward calls additive.
    acc = {id(loss): np.ones((), dtype=loss.dtype)}
    for node in nodes:
        grad_here = acc.get(id(node))
        if grad_here is None or node._backward is None:
            continue
        for parent, contribution in zip(node._parents, node._backward(grad_here)):
            if contribution is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in acc:
                acc[key] = acc[key] + contribution
            else:
                acc[key] = contribution

    for node in nodes:
        grad_here = acc.get(id(node))
        if grad_here is None:
            continue
        grad_arr = np.asarray(grad_here, dtype=node.dtype).reshape(node.shape)
        # Accumulate without in-place writes: adjoint outputs may be views
        # into other nodes' gradients (reshape/transpose adjoints).
        node.grad = grad_arr if node.grad is None else node.grad + grad_arr


def _check_suffix(big: tuple, small: tuple, op: str) -> None:
    if len(small) > len(big) or big[len(big) - len(small):] != small:
        raise ShapeError(f"{op}: shape {small} does not suffix-broadcast onto {big}")


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum leading broadcast axes so grad matches the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.ndim >= b.ndim:
        _check_suffix(a.shape, b.shape, op)
    else:
        _check_suffix(b.shape, a.shape, op)


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")

    def adjoint(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make(a.data + b.data, (a, b), adjoint)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")

    def adjoint(g):
        return _reduce_to(g, a.shape), -_reduce_to(g, b.shape)

    return _make(a.data - b.data, (a, b), adjoint)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; shapes equal up to leading-batch broadcast."""
    _binary_shapes(a, b, "mul")

    def adjoint(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), adjoint)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    c = float(c)

    def adjoint(g):
        return (g * c,)

    return _make(x.data * c, (x,), adjoint)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batched when leading dims match or one side is 2D."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} @ {b.shape}")

    def adjoint(g):
        ga = _reduce_to(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape)
        gb = _reduce_to(np.matmul(a.data.swapaxes(-1, -2), g), b.shape)
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), adjoint)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Exponential normalization along axis, computed with max-subtraction."""
    if not np.isfinite(x.data).all():
        raise NumericError("softmax received non-finite input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def adjoint(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _make(y, (x,), adjoint)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form."""
    cdf = 0.5 * (1.0 + special.erf(x.data * _INV_SQRT2))
    y = x.data * cdf

    def adjoint(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    return _make(y, (x,), adjoint)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    y = xhat * gain.data + bias.data

    def adjoint(g):
        dbias = _reduce_to(g.sum(axis=tuple(range(g.ndim - 1))), bias.shape)
        dgain = _reduce_to((g * xhat).sum(axis=tuple(range(g.ndim - 1))), gain.shape)
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias

    return _make(y, (x, gain, bias), adjoint)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [batch, classes] logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"labels must be a vector of length {logits.shape[0]}, got shape {labels.shape}"
        )
    n, k = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise InputError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    if not np.isfinite(logits.data).all():
        raise NumericError("cross_entropy received non-finite logits")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def adjoint(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (g * p / n,)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), adjoint)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")

    def adjoint(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), adjoint)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"axes {axes} is not a permutation for rank {x.ndim}")
    inverse = tuple(np.argsort(axes))

    def adjoint(g):
        return (g.transpose(inverse),)

    return _make(x.data.transpose(axes), (x,), adjoint)


def index_select(x: Tensor, axis: int, indices) -> Tensor:
    """Gather slices along axis with one shared index list."""
    axis = axis % x.ndim
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"index_select expects a flat index list, got shape {idx.shape}")
    n = x.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise InputError(f"index out of range for axis {axis} of size {n}")

    def adjoint(g):
        gx = np.zeros_like(x.data)
        np.add.at(np.moveaxis(gx, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (gx,)

    return _make(np.take(x.data, idx, axis=axis), (x,), adjoint)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Gather rows (second-to-last axis) with per-batch index lists.

    x: [..., n, d], indices: [..., k] with matching leading dims.
    """
    if x.ndim < 2:
        raise ShapeError(f"gather_rows needs rank >= 2 input, got {x.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape[:-1] != x.shape[:-2]:
        raise ShapeError(
            f"index leading dims {idx.shape[:-1]} do not match input {x.shape[:-2]}"
        )
    n = x.shape[-2]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise InputError(f"row index out of range for {n} rows")
    d = x.shape[-1]
    expanded = np.broadcast_to(idx[..., None], idx.shape + (d,))
    out = np.take_along_axis(x.data, expanded, axis=-2)

    lead = int(np.prod(x.shape[:-2], dtype=np.int64)) if x.ndim > 2 else 1
    k = idx.shape[-1]

    def adjoint(g):
        gx = np.zeros_like(x.data)
        gx3 = gx.reshape(lead, n, d)
        g3 = g.reshape(lead, k, d)
        idx3 = idx.reshape(lead, k)
        batch = np.arange(lead)[:, None]
        np.add.at(gx3, (batch, idx3), g3)
        return (gx,)

    return _make(out, (x,), adjoint)


def weighted_row_mean(x: Tensor, w: Tensor, eps: float = 1e-12) -> Tensor:
    """Convex combination of rows: sum_i w_i x_i / sum_i w_i, keepdims.

    x: [..., n, d], w: [..., n]. Rows whose weights sum below eps fall
    back to the unweighted mean (and contribute no gradient to w).
    """
    if x.ndim < 2 or w.shape != x.shape[:-1]:
        raise ShapeError(f"weighted_row_mean: weights {w.shape} do not match rows of {x.shape}")
    n = x.shape[-2]
    denom = w.data.sum(axis=-1, keepdims=True)  # [..., 1]
    degenerate = np.abs(denom) < eps
    safe_denom = np.where(degenerate, 1.0, denom)
    weighted = (w.data[..., None] * x.data).sum(axis=-2, keepdims=True)
    fallback = x.data.mean(axis=-2, keepdims=True)
    out = np.where(degenerate[..., None], fallback, weighted / safe_denom[..., None])

    def adjoint(g):
        inv = np.where(degenerate, 0.0, 1.0 / safe_denom)  # [..., 1]
        gx = g * (w.data * inv)[..., None] + degenerate[..., None] * (g / n)
        gw = ((x.data - out) * g).sum(axis=-1) * inv
        return gx, gw

    return _make(out, (x, w), adjoint)


def mean(x: Tensor, axis: int) -> Tensor:
    axis = axis if axis >= 0 else x.ndim + axis
    n = x.shape[axis]

    def adjoint(g):
        return (np.repeat(np.expand_dims(g, axis) / n, n, axis=axis),)

    return _make(x.data.mean(axis=axis), (x,), adjoint)


def tsum(x: Tensor, axis=None) -> Tensor:
    """Sum over one axis, or over everything (axis=None) to a scalar."""
    if axis is None:
        def adjoint(g):
            return (np.broadcast_to(g, x.shape).copy(),)

        return _make(np.asarray(x.data.sum(), dtype=x.dtype), (x,), adjoint)

    axis = axis if axis >= 0 else x.ndim + axis
    n = x.shape[axis]

    def adjoint(g):
        return (np.repeat(np.expand_dims(g, axis), n, axis=axis),)

    return _make(x.data.sum(axis=axis), (x,), adjoint)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise InputError("concat of zero tensors")
    first = tensors[0]
    axis = axis if axis >= 0 else first.ndim + axis
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            i != axis and t.shape[i] != first.shape[i] for i in range(first.ndim)
        ):
            raise ShapeError(f"concat shapes disagree off axis {axis}: "
                             f"{[tuple(t.shape) for t in tensors]}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def adjoint(g):
        pieces = []
        slicer = [slice(None)] * first.ndim
        for i in range(len(tensors)):
            slicer[axis] = slice(bounds[i], bounds[i + 1])
            pieces.append(g[tuple(slicer)])
        return tuple(pieces)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), adjoint)


def repeat_leading(x: Tensor, n: int) -> Tensor:
    """Stack n copies of x along a new leading axis."""
    if n < 1:
        raise InputError(f"repeat count must be >= 1, got {n}")

    def adjoint(g):
        return (g.sum(axis=0),)

    return _make(np.broadcast_to(x.data, (n,) + x.shape).copy(), (x,), adjoint)
