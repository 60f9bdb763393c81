"""Minimal reverse-mode autodiff on numpy arrays.

A Tensor wraps a float64 ndarray and records a tape of backward closures.
Only the operations needed by the denoiser, latent encoder, and travel-time
classifier are implemented. Graphs are built lazily: if no input requires
gradients, no closure is recorded and forward runs at plain-numpy cost.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "_done")

    def __init__(self, data, requires_grad=False, _prev=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = _backward
        self._prev = _prev
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        """Reverse-mode sweep from a scalar loss into every .grad slot.

        The tape is released afterwards; calling backward a second time on
        the same graph raises.
        """
        if self.data.size != 1:
            raise ValueError("backward requires a scalar tensor")
        if self._done:
            raise RuntimeError("backward already called on this graph")
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad; no tape recorded")

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
            for child in node._prev:
                if child.requires_grad and id(child) not in visited:
                    stack.append((child, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
            node._done = True
            node._backward = None
            node._prev = ()

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data
    req = a.requires_grad or b.requires_grad
    if not req:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True, _prev=(a, b))

    def back():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad, b.data.shape))

    out._backward = back
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data
    req = a.requires_grad or b.requires_grad
    if not req:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True, _prev=(a, b))

    def back():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))

    out._backward = back
    return out


def matmul(x, w) -> Tensor:
    """x (..., I) @ w (I, O) -> (..., O)."""
    x, w = as_tensor(x), as_tensor(w)
    out_data = x.data @ w.data
    req = x.requires_grad or w.requires_grad
    if not req:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True, _prev=(x, w))

    def back():
        g = out.grad
        if x.requires_grad:
            _accum(x, g @ w.data.T)
        if w.requires_grad:
            i, o = w.data.shape
            _accum(w, x.data.reshape(-1, i).T @ g.reshape(-1, o))

    out._backward = back
    return out


def texp(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)
    if not x.requires_grad:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True, _prev=(x,))

    def back():
        _accum(x, out.grad * out_data)

    out._backward = back
    return out


def tlog(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.log(x.data)
    if not x.requires_grad:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True, _prev=(x,))

    def back():
        _accum(x, out.grad / x.data)

    out._backward = back
    return out


def pow_const(x, p: float) -> Tensor:
    x = as_tensor(x)
    out_data = x.data ** p
    if not x.requires_grad:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True, _prev=(x,))

    def back():
        _accum(x, out.grad * p * x.data ** (p - 1.0))

    out._backward = back
    return out


def silu(x) -> Tensor:
    """x * sigmoid(x), the smooth gating nonlinearity used everywhere."""
    x = as_tensor(x)
    s = np.empty_like(x.data)
    pos = x.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    s[~pos] = ex / (1.0 + ex)
    out_data = x.data * s
    if not x.requires_grad:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True, _prev=(x,))

    def back():
        _accum(x, out.grad * s * (1.0 + x.data * (1.0 - s)))

    out._backward = back
    return out


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)
    if not x.requires_grad:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True, _prev=(x,))

    def back():
        g = out.grad
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            shape = list(x.data.shape)
            for ax in axes:
                shape[ax] = 1
            g = g.reshape(shape)
        _accum(x, np.broadcast_to(g, x.data.shape).copy())

    out._backward = back
    return out


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.data.shape[a] for a in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.reshape(shape)
    if not x.requires_grad:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True, _prev=(x,))

    def back():
        _accum(x, out.grad.reshape(x.data.shape))

    out._backward = back
    return out


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    req = any(t.requires_grad for t in tensors)
    if not req:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True, _prev=tuple(tensors))

    def back():
        splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]
        parts = np.split(out.grad, splits, axis=axis)
        for t, g in zip(tensors, parts):
            if t.requires_grad:
                _accum(t, g)

    out._backward = back
    return out


def conv1d(x, w, b, kernel: int = 3) -> Tensor:
    """Temporal convolution with same-padding.

    x: (B, M, C_in); w: (kernel * C_in, C_out); b: (C_out,).
    Tap i of the kernel occupies rows [i*C_in, (i+1)*C_in) of w.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    bsz, m, c_in = x.data.shape
    pad = (kernel - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    cols = np.concatenate([xp[:, i:i + m, :] for i in range(kernel)], axis=2)
    out_data = cols @ w.data + b.data
    req = x.requires_grad or w.requires_grad or b.requires_grad
    if not req:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True, _prev=(x, w, b))

    def back():
        g = out.grad
        c_out = g.shape[-1]
        if w.requires_grad:
            _accum(w, cols.reshape(-1, kernel * c_in).T @ g.reshape(-1, c_out))
        if b.requires_grad:
            _accum(b, g.sum(axis=(0, 1)))
        if x.requires_grad:
            gcols = g @ w.data.T
            gxp = np.zeros_like(xp)
            for i in range(kernel):
                gxp[:, i:i + m, :] += gcols[:, :, i * c_in:(i + 1) * c_in]
            _accum(x, gxp[:, pad:pad + m, :])

    out._backward = back
    return out


_RESAMPLE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def resample_matrix(m_in: int, m_out: int) -> np.ndarray:
    """Linear-interpolation matrix R (m_out, m_in) along the time axis."""
    key = (m_in, m_out)
    if key in _RESAMPLE_CACHE:
        return _RESAMPLE_CACHE[key]
    r = np.zeros((m_out, m_in))
    if m_in == 1:
        r[:, 0] = 1.0
    else:
        pos = np.linspace(0.0, m_in - 1.0, m_out) if m_out > 1 else np.array([0.0])
        i0 = np.clip(np.floor(pos).astype(int), 0, m_in - 2)
        frac = pos - i0
        r[np.arange(m_out), i0] = 1.0 - frac
        r[np.arange(m_out), i0 + 1] += frac
    _RESAMPLE_CACHE[key] = r
    return r


def time_resample(x, m_out: int) -> Tensor:
    """Resample (B, M, C) to (B, m_out, C) by linear interpolation in time."""
    x = as_tensor(x)
    r = resample_matrix(x.data.shape[1], m_out)
    out_data = np.einsum("om,bmc->boc", r, x.data)
    if not x.requires_grad:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True, _prev=(x,))

    def back():
        _accum(x, np.einsum("om,boc->bmc", r, out.grad))

    out._backward = back
    return out


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of integer labels under softmax(logits).

    logits: (B, C); labels: (B,) ints.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    bsz = logits.data.shape[0]
    nll = -np.log(p[np.arange(bsz), labels] + 1e-300)
    out_data = nll.mean()
    if not logits.requires_grad:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True, _prev=(logits,))

    def back():
        g = p.copy()
        g[np.arange(bsz), labels] -= 1.0
        _accum(logits, g * (out.grad / bsz))

    out._backward = back
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Stable log-softmax over the last axis (plain numpy, no tape)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
