"""Minimal deterministic reverse-mode autodiff on float64 numpy arrays.

Every operation builds a node in an implicit computation graph; calling
``backward`` on a scalar loss walks the graph in reverse topological order
exactly once, accumulating gradients into leaf tensors that were created
with ``requires_grad=True``. Everything is single-threaded and bit-exact
for identical inputs.

Conventions:
  - all data is float64; inputs are checked for NaN/Inf at tensor creation
  - ReLU subgradient at 0 is 0
  - bilinear upsampling uses align-corners sampling
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ContractViolation, NonFiniteError


class Tensor:
    """A float64 array with an optional gradient slot and a backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "needs_grad", "op", "_prev",
                 "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", _prev=()):
        self.data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values entering op '{op}'")
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = tuple(_prev)
        # whether any leaf below this node wants a gradient; lets the
        # backward rules skip dead branches (e.g. d(input image))
        self.needs_grad = requires_grad or any(p.needs_grad for p in self._prev)
        self.op = op
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if not self.needs_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # Minimal operator sugar; the heavy ops are module functions.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def tape(loss: Tensor):
    """Reverse-topological list of graph nodes reachable from ``loss``.

    The returned order is deterministic: children are visited in the order
    they were recorded. Exposed for introspection (e.g. counting how many
    convolution forwards a loss contains).
    """
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
        for child in reversed(node._prev):
            if id(child) not in seen:
                stack.append((child, False))
    return order


def backward(loss: Tensor):
    """Accumulate gradients of a scalar loss into every reachable leaf."""
    if loss.data.shape != ():
        raise ContractViolation(
            f"backward requires a scalar loss, got shape {loss.data.shape}")
    order = tape(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params):
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# elementwise / reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data, op="add", _prev=(a, b))

    def _bw(g):
        a._accum(_unbroadcast(g, a.data.shape))
        b._accum(_unbroadcast(g, b.data.shape))

    out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, op="mul", _prev=(a, b))

    def _bw(g):
        a._accum(_unbroadcast(g * b.data, a.data.shape))
        b._accum(_unbroadcast(g * a.data, b.data.shape))

    out._backward = _bw
    return out


def scale(a: Tensor, c) -> Tensor:
    """Multiply by a constant scalar or ndarray (no gradient through c)."""
    c = np.asarray(c, dtype=np.float64)
    out = Tensor(a.data * c, op="scale", _prev=(a,))

    def _bw(g):
        a._accum(_unbroadcast(g * c, a.data.shape))

    out._backward = _bw
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), op="relu", _prev=(a,))

    def _bw(g):
        # subgradient 0 at the kink
        a._accum(g * (a.data > 0.0))

    out._backward = _bw
    return out


def abs_(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data), op="abs", _prev=(a,))

    def _bw(g):
        a._accum(g * np.sign(a.data))

    out._backward = _bw
    return out


def sum_(a: Tensor, axis=None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis), op="sum", _prev=(a,))

    def _bw(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.data.shape).copy())
        else:
            a._accum(np.broadcast_to(
                np.expand_dims(g, axis), a.data.shape).copy())

    out._backward = _bw
    return out


def mean_(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum_(a, axis=axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), op="reshape", _prev=(a,))

    def _bw(g):
        a._accum(g.reshape(a.data.shape))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# layers


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x:[n,d], w:[d,m], b:[m]."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ContractViolation(
            f"affine shape mismatch: x {x.data.shape} vs w {w.data.shape}")
    out = Tensor(x.data @ w.data + b.data, op="affine", _prev=(x, w, b))

    def _bw(g):
        if x.needs_grad:
            x._accum(g @ w.data.T)
        if w.needs_grad:
            w._accum(x.data.T @ g)
        if b.needs_grad:
            b._accum(g.sum(axis=0))

    out._backward = _bw
    return out


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution (cross-correlation) with square stride/padding.

    Accepts x of shape [cin,h,w] or [n,cin,h,w]; kernels [cout,cin,kh,kw].
    """
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ConfigurationError(f"padding must be >= 0, got {padding}")
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.data.ndim != 4:
        raise ConfigurationError(
            f"conv2d expects 3/4-d input and 4-d kernels, got "
            f"{x.data.shape} and {kernels.data.shape}")
    n, cin, h, w = xd.shape
    cout, kcin, kh, kw = kernels.data.shape
    if kcin != cin:
        raise ConfigurationError(
            f"conv2d channel mismatch: input has {cin}, kernels expect {kcin}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ConfigurationError(
            f"kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # [n, ho*wo, cin*kh*kw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, cin * kh * kw)
    wmat = kernels.data.reshape(cout, cin * kh * kw)
    y = (cols @ wmat.T).transpose(0, 2, 1).reshape(n, cout, ho, wo)

    out = Tensor(y[0] if squeeze else y, op="conv2d", _prev=(x, kernels))

    def _bw(g):
        gd = g[None] if squeeze else g
        g2 = gd.reshape(n, cout, ho * wo).transpose(0, 2, 1)  # [n, ho*wo, cout]
        if kernels.needs_grad:
            dw = np.tensordot(g2, cols, axes=([0, 1], [0, 1]))  # [cout, cin*kh*kw]
            kernels._accum(dw.reshape(cout, cin, kh, kw))
        if x.needs_grad:
            dcols = g2 @ wmat                                   # [n, ho*wo, cin*kh*kw]
            d6 = dcols.reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride,
                        j:j + stride * wo:stride] += d6[:, :, i, j]
            dx = dxp[:, :, padding:padding + h, padding:padding + w]
            x._accum(dx[0] if squeeze else dx)

    out._backward = _bw
    return out


def spatial_softmax(a: Tensor, temperature: float = 1.0) -> Tensor:
    """Softmax jointly over the last two (spatial) dimensions."""
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    x = a.data / temperature
    flat = x.reshape(*x.shape[:-2], -1)
    flat = flat - flat.max(axis=-1, keepdims=True)
    e = np.exp(flat)
    y = (e / e.sum(axis=-1, keepdims=True)).reshape(x.shape)
    out = Tensor(y, op="spatial_softmax", _prev=(a,))

    def _bw(g):
        gy = (g * y).sum(axis=(-2, -1), keepdims=True)
        a._accum((y * (g - gy)) / temperature)

    out._backward = _bw
    return out


@lru_cache(maxsize=64)
def _resample_matrix(src: int, dst: int):
    """Align-corners bilinear interpolation matrix of shape [dst, src]."""
    m = np.zeros((dst, src))
    if src == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(dst) * (src - 1) / (dst - 1) if dst > 1 else np.zeros(1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    m[np.arange(dst), lo] += 1.0 - frac
    m[np.arange(dst), hi] += frac
    return m


def bilinear_upsample(a: Tensor, target) -> Tensor:
    """Upsample the last two dims to ``target=(h,w)`` with align-corners bilinear."""
    h, w = target
    sh, sw = a.data.shape[-2], a.data.shape[-1]
    if h < sh or w < sw:
        raise ContractViolation(
            f"bilinear_upsample cannot downscale {sh}x{sw} to {h}x{w}")
    rh = _resample_matrix(sh, h)
    rw = _resample_matrix(sw, w)
    y = np.einsum("ij,...jk,lk->...il", rh, a.data, rw, optimize=True)
    out = Tensor(y, op="bilinear_upsample", _prev=(a,))

    def _bw(g):
        a._accum(np.einsum("ji,...jk,kl->...il", rh, g, rw, optimize=True))

    out._backward = _bw
    return out


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class. logits:[n,k], labels:[n] ints."""
    labels = np.asarray(labels)
    n, k = logits.data.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ContractViolation(
            f"labels out of range [0,{k}): {labels.min()}..{labels.max()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    losses = lse - z[np.arange(n), labels]
    out = Tensor(losses.mean(), op="cross_entropy", _prev=(logits,))

    def _bw(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        logits._accum(g * p / n)

    out._backward = _bw
    return out


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Plain (non-graph) softmax over the last axis, for evaluation code."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Standard Adam with bias correction; bit-deterministic given inputs."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ContractViolation(
                    f"gradient shape {g.shape} != param shape {p.data.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / (1 - self.beta1 ** t)
            vhat = self.v[i] / (1 - self.beta2 ** t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# verification helper


def numeric_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function f at x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return g
