"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Only the operations the brain model and its losses need are implemented.
Each op records a closure that routes the output gradient to its parents;
``backward`` runs them in reverse topological order. Gradients accumulate,
so parameter buffers must be zeroed between steps.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def _accumulate(self, g: np.ndarray) -> None:
        # No backward_fn mutates gradients in place, so holding a reference
        # on first accumulation is safe and avoids a full copy.
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable node."""
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {self.shape}")
        if self._backward_done:
            raise RuntimeError("backward already called on this graph; rebuild it before differentiating again")
        self._backward_done = True

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, grad={self.requires_grad})"

    # -- operator sugar --------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)


def wrap(x) -> Tensor:
    """Coerce a value to a constant Tensor (no-op on Tensors)."""
    return x if isinstance(x, Tensor) else Tensor(x)


_grad_enabled = True


class no_grad:
    """Context manager that skips graph construction (inference passes)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def add(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), backward_fn)


def neg(a) -> Tensor:
    a = wrap(a)

    def backward_fn(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), backward_fn)


def power(a, p: float) -> Tensor:
    a = wrap(a)
    p = float(p)

    def backward_fn(g):
        a._accumulate(g * p * a.data ** (p - 1.0))

    return _make(a.data**p, (a,), backward_fn)


def matmul(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def backward_fn(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(a.data @ b.data, (a, b), backward_fn)


def _norm_axis(axis, ndim) -> tuple[int, ...] | None:
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = wrap(a)
    axes = _norm_axis(axis, a.ndim)

    def backward_fn(g):
        if axes is None:
            grad = np.broadcast_to(g, a.shape)
        else:
            if not keepdims:
                g = np.expand_dims(g, axes)
            grad = np.broadcast_to(g, a.shape)
        a._accumulate(grad)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward_fn)


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = wrap(a)
    axes = _norm_axis(axis, a.ndim)
    if axes is None:
        count = a.data.size
    else:
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def backward_fn(g):
        if axes is None:
            grad = np.broadcast_to(g, a.shape)
        else:
            if not keepdims:
                g = np.expand_dims(g, axes)
            grad = np.broadcast_to(g, a.shape)
        a._accumulate(grad / count)

    return _make(a.data.mean(axis=axes, keepdims=keepdims), (a,), backward_fn)


def exp(a) -> Tensor:
    a = wrap(a)
    out_data = np.exp(a.data)

    def backward_fn(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), backward_fn)


def log(a) -> Tensor:
    a = wrap(a)

    def backward_fn(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), backward_fn)


def sqrt(a) -> Tensor:
    a = wrap(a)
    out_data = np.sqrt(a.data)

    def backward_fn(g):
        a._accumulate(g * 0.5 / out_data)

    return _make(out_data, (a,), backward_fn)


def elu(a, alpha: float = 1.0) -> Tensor:
    a = wrap(a)
    pos = a.data > 0
    out_data = np.where(pos, a.data, alpha * np.expm1(a.data))

    def backward_fn(g):
        a._accumulate(g * np.where(pos, 1.0, out_data + alpha))

    return _make(out_data, (a,), backward_fn)


def reshape(a, shape) -> Tensor:
    a = wrap(a)
    old = a.shape

    def backward_fn(g):
        a._accumulate(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward_fn)


def transpose(a, axes) -> Tensor:
    a = wrap(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        a._accumulate(g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward_fn)


def concat(parts: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [wrap(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            if p.requires_grad:
                p._accumulate(piece)

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, backward_fn)


def unfold_last(a, kernel: int, pad_left: int, pad_right: int) -> Tensor:
    """Sliding windows along the last axis: (..., T) -> (..., T_out, kernel)."""
    a = wrap(a)
    t = a.shape[-1]
    t_out = t + pad_left + pad_right - kernel + 1
    if t_out < 1:
        raise ValueError(f"kernel {kernel} too large for length {t} with pads ({pad_left},{pad_right})")
    pad_spec = [(0, 0)] * (a.ndim - 1) + [(pad_left, pad_right)]
    padded = np.pad(a.data, pad_spec)
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel, axis=-1)

    def backward_fn(g):
        grad_padded = np.zeros_like(padded)
        for j in range(kernel):
            grad_padded[..., j : j + t_out] += g[..., :, j]
        a._accumulate(grad_padded[..., pad_left : pad_left + t])

    return _make(windows, (a,), backward_fn)


def avg_pool_last(a, width: int) -> Tensor:
    """Non-overlapping average pooling along the last axis."""
    a = wrap(a)
    t = a.shape[-1]
    if t % width != 0:
        raise ValueError(f"pool width {width} must divide length {t}")
    new_shape = a.shape[:-1] + (t // width, width)

    def backward_fn(g):
        a._accumulate(np.repeat(g, width, axis=-1) / width)

    return _make(a.data.reshape(new_shape).mean(axis=-1), (a,), backward_fn)


def batch_standardize(x, gamma, beta, feature_axis: int, eps: float) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Standardize over all axes but ``feature_axis``, then scale and shift.

    Fused batch-standardization with the closed-form gradient (biased
    variance): one pass forward and one backward instead of a chain of
    elementwise graph ops. Returns (output, batch mean, batch variance); the
    stats are plain per-feature arrays for running-average bookkeeping.
    """
    x, gamma, beta = wrap(x), wrap(gamma), wrap(beta)
    axes = tuple(i for i in range(x.ndim) if i != feature_axis)
    shape = [1] * x.ndim
    shape[feature_axis] = x.shape[feature_axis]
    mu = x.data.mean(axis=axes, keepdims=True)
    # E[x^2] - mu^2 saves a full centered temporary; float64 keeps it stable
    var = (x.data * x.data).mean(axis=axes, keepdims=True) - mu * mu
    np.maximum(var, 0.0, out=var)
    inv = 1.0 / np.sqrt(var + eps)
    g_r = gamma.data.reshape(shape)
    scale = g_r * inv
    out_data = x.data * scale + (beta.data.reshape(shape) - mu * scale)
    count = int(np.prod([x.shape[i] for i in axes]))

    def backward_fn(g):
        xhat = (x.data - mu) * inv
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes).reshape(gamma.shape))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes).reshape(beta.shape))
        if x.requires_grad:
            dxhat = g * g_r
            term_mean = dxhat.sum(axis=axes, keepdims=True) / count
            term_proj = (dxhat * xhat).sum(axis=axes, keepdims=True) / count
            x._accumulate(inv * (dxhat - term_mean - xhat * term_proj))

    out = _make(out_data, (x, gamma, beta), backward_fn)
    return out, mu.reshape(-1), var.reshape(-1)


def backward(loss: Tensor) -> None:
    """Reverse-mode gradient accumulation from a scalar loss node."""
    loss.backward()
