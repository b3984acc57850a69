"""Minimal reverse-mode autodiff over numpy float64 arrays.

Every op builds a closure that scatters upstream gradient into its
inputs; Tensor.backward() walks the graph in reverse topological
order.  64-bit floats throughout so central finite differences are a
trustworthy oracle.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    # Make ndarray <op> Tensor defer to our reflected operators instead
    # of consuming the Tensor as a nested sequence via __getitem__.
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, _prev=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._backward = None
        self._prev = _prev

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo = []
        visited = set()
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
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad[...] = 1.0
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- arithmetic -------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data + other.data,
                     self.requires_grad or other.requires_grad, (self, other))
        def _bw():
            if self.requires_grad:
                self.grad += _unbroadcast(out.grad, self.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(out.grad, other.shape)
        out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, self.requires_grad, (self,))
        def _bw():
            if self.requires_grad:
                self.grad += -out.grad
        out._backward = _bw
        return out

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data * other.data,
                     self.requires_grad or other.requires_grad, (self, other))
        def _bw():
            if self.requires_grad:
                self.grad += _unbroadcast(out.grad * other.data, self.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(out.grad * self.data, other.shape)
        out._backward = _bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data / other.data,
                     self.requires_grad or other.requires_grad, (self, other))
        def _bw():
            if self.requires_grad:
                self.grad += _unbroadcast(out.grad / other.data, self.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(
                    -out.grad * self.data / (other.data * other.data), other.shape)
        out._backward = _bw
        return out

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents")
        out = Tensor(self.data ** exponent, self.requires_grad, (self,))
        def _bw():
            if self.requires_grad:
                self.grad += out.grad * exponent * self.data ** (exponent - 1)
        out._backward = _bw
        return out

    def __matmul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data @ other.data,
                     self.requires_grad or other.requires_grad, (self, other))
        def _bw():
            if self.requires_grad:
                g = out.grad @ other.data.swapaxes(-1, -2)
                self.grad += _unbroadcast(g, self.shape)
            if other.requires_grad:
                g = self.data.swapaxes(-1, -2) @ out.grad
                other.grad += _unbroadcast(g, other.shape)
        out._backward = _bw
        return out

    # -- elementwise functions --------------------------------------

    def exp(self):
        out = Tensor(np.exp(self.data), self.requires_grad, (self,))
        def _bw():
            if self.requires_grad:
                self.grad += out.grad * out.data
        out._backward = _bw
        return out

    def log(self):
        out = Tensor(np.log(self.data), self.requires_grad, (self,))
        def _bw():
            if self.requires_grad:
                self.grad += out.grad / self.data
        out._backward = _bw
        return out

    def tanh(self):
        out = Tensor(np.tanh(self.data), self.requires_grad, (self,))
        def _bw():
            if self.requires_grad:
                self.grad += out.grad * (1.0 - out.data * out.data)
        out._backward = _bw
        return out

    def sigmoid(self):
        out = Tensor(1.0 / (1.0 + np.exp(-self.data)), self.requires_grad, (self,))
        def _bw():
            if self.requires_grad:
                self.grad += out.grad * out.data * (1.0 - out.data)
        out._backward = _bw
        return out

    def sqrt(self):
        return self ** 0.5

    def abs(self):
        out = Tensor(np.abs(self.data), self.requires_grad, (self,))
        def _bw():
            if self.requires_grad:
                self.grad += out.grad * np.sign(self.data)
        out._backward = _bw
        return out

    def clip(self, lo, hi):
        """Clamp values; gradient is zero where the clamp is active."""
        out = Tensor(np.clip(self.data, lo, hi), self.requires_grad, (self,))
        def _bw():
            if self.requires_grad:
                inside = (self.data > lo) & (self.data < hi)
                self.grad += out.grad * inside
        out._backward = _bw
        return out

    # -- shape ops --------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), self.requires_grad, (self,))
        def _bw():
            if self.requires_grad:
                self.grad += out.grad.reshape(self.shape)
        out._backward = _bw
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        out = Tensor(self.data.transpose(axes), self.requires_grad, (self,))
        inverse = np.argsort(axes)
        def _bw():
            if self.requires_grad:
                self.grad += out.grad.transpose(inverse)
        out._backward = _bw
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key], self.requires_grad, (self,))
        def _bw():
            if self.requires_grad:
                np.add.at(self.grad, key, out.grad)
        out._backward = _bw
        return out

    # -- reductions -------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                     self.requires_grad, (self,))
        def _bw():
            if self.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self.grad += np.broadcast_to(g, self.shape)
        out._backward = _bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def item(self):
        return float(self.data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def maximum(a, b):
    """Elementwise max; ties send the gradient to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data >= b.data
    out = Tensor(np.where(take_a, a.data, b.data),
                 a.requires_grad or b.requires_grad, (a, b))
    def _bw():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad * take_a, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(out.grad * ~take_a, b.shape)
    out._backward = _bw
    return out


def minimum(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data),
                 a.requires_grad or b.requires_grad, (a, b))
    def _bw():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad * take_a, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(out.grad * ~take_a, b.shape)
    out._backward = _bw
    return out


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 any(t.requires_grad for t in tensors), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    def _bw():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * out.data.ndim
                idx[axis] = slice(lo, hi)
                t.grad += out.grad[tuple(idx)]
    out._backward = _bw
    return out


def masked_softmax(logits: Tensor, mask: np.ndarray, axis=-1) -> Tensor:
    """Softmax over `axis` restricted to mask-true entries.

    Masked entries get weight exactly 0; rows with no valid entry
    come out all-zero instead of NaN (padded query rows).
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    x = logits.data
    mx = np.max(np.where(m, x, -np.inf), axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(np.where(m, x - mx, -np.inf))
    s = e.sum(axis=axis, keepdims=True)
    p = e / np.where(s > 0.0, s, 1.0)
    out = Tensor(p, logits.requires_grad, (logits,))
    def _bw():
        if logits.requires_grad:
            g = out.grad
            inner = (g * p).sum(axis=axis, keepdims=True)
            logits.grad += p * (g - inner)
    out._backward = _bw
    return out


def embedding_lookup(table: Tensor, idx: np.ndarray) -> Tensor:
    """table: [V, E]; idx: integer array [...] -> [... , E]."""
    idx = np.asarray(idx)
    out = Tensor(table.data[idx], table.requires_grad, (table,))
    def _bw():
        if table.requires_grad:
            np.add.at(table.grad, idx, out.grad)
    out._backward = _bw
    return out


def bilinear_sample(grid: Tensor, points: Tensor) -> Tensor:
    """Sample grid [B, H, W, C] at points [B, P, 2] in [0, 1]^2.

    points[..., 0] is x (width), points[..., 1] is y (height); corners
    of the unit square map onto the corner grid cells (align-corners).
    Out-of-range neighbors contribute zero, so samples just outside
    the grid fade out instead of clamping.  Piecewise smooth in the
    points: kinks exactly on cell boundaries.
    """
    b, h, w, c = grid.shape
    u = points.data[..., 0] * (w - 1)
    v = points.data[..., 1] * (h - 1)
    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    wx = u - x0
    wy = v - y0
    batch = np.arange(b, dtype=np.intp)[:, None] * np.ones_like(x0)

    neighbors = []
    for dy, dx, weight, dwdu, dwdv in (
        (0, 0, (1 - wx) * (1 - wy), -(1 - wy), -(1 - wx)),
        (0, 1, wx * (1 - wy), (1 - wy), -wx),
        (1, 0, (1 - wx) * wy, -wy, (1 - wx)),
        (1, 1, wx * wy, wy, wx),
    ):
        xi = x0 + dx
        yi = y0 + dy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xc = np.clip(xi, 0, w - 1)
        yc = np.clip(yi, 0, h - 1)
        val = grid.data[batch, yc, xc] * valid[..., None]
        neighbors.append((yc, xc, valid, weight, dwdu, dwdv, val))

    out_data = sum(wt[..., None] * val for _, _, _, wt, _, _, val in neighbors)
    out = Tensor(out_data, grid.requires_grad or points.requires_grad, (grid, points))

    def _bw():
        g = out.grad
        if grid.requires_grad:
            for yc, xc, valid, wt, _, _, _ in neighbors:
                np.add.at(grid.grad, (batch, yc, xc),
                          g * (wt * valid)[..., None])
        if points.requires_grad:
            du = np.zeros_like(u)
            dv = np.zeros_like(v)
            for _, _, _, _, dwdu, dwdv, val in neighbors:
                inner = (g * val).sum(axis=-1)
                du += dwdu * inner
                dv += dwdv * inner
            points.grad[..., 0] += du * (w - 1)
            points.grad[..., 1] += dv * (h - 1)
    out._backward = _bw
    return out


def check_gradient(build_loss, param: Tensor, flat_index: int, step: float = 1e-6):
    """Central-difference derivative of build_loss() wrt one entry."""
    original = param.data.flat[flat_index]
    param.data.flat[flat_index] = original + step
    hi = build_loss().item()
    param.data.flat[flat_index] = original - step
    lo = build_loss().item()
    param.data.flat[flat_index] = original
    return (hi - lo) / (2.0 * step)
