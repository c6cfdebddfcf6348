"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery to differentiate the flow encoder, LSTM cell,
FC head, quaternion algebra, and the loss suite: elementwise ops with
broadcasting, matmul, a stride-2 3x3 convolution, reductions, indexing
and concatenation.  Everything is float64; a ``Tensor`` either carries
parameters (``requires_grad=True``) or is an interior node created by
an op.  ``backward()`` runs a topological sweep from a scalar root.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # make ndarray <op> Tensor defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph traversal ----------------------------------------------------

    def backward(self, seed=None):
        if seed is None:
            if self.data.shape != ():
                raise ValueError("backward() needs a scalar root or an explicit seed")
            seed = np.ones(())
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.asarray(seed, dtype=float)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=float)
        else:
            self.grad = self.grad + g

    def zero_grad(self):
        self.grad = None

    # -- operator sugar -----------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def item(self):
        return float(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(a, b, out_data, da, db):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(da(g), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(db(g), b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, a.data + b.data, lambda g: g, lambda g: g)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, a.data * b.data, lambda g: g * b.data, lambda g: g * a.data)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _binary(
        a,
        b,
        a.data / b.data,
        lambda g: g / b.data,
        lambda g: -g * a.data / (b.data * b.data),
    )


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            if a.data.ndim == 2 and b.data.ndim == 1:
                a._accumulate(np.outer(g, b.data))
            elif a.data.ndim == 1 and b.data.ndim == 2:
                a._accumulate(g @ b.data.T)
            else:
                a._accumulate(g @ b.data.T)
        if b.requires_grad:
            if a.data.ndim == 2 and b.data.ndim == 1:
                b._accumulate(a.data.T @ g)
            elif a.data.ndim == 1 and b.data.ndim == 2:
                b._accumulate(np.outer(a.data, g))
            else:
                b._accumulate(a.data.T @ g)

    return Tensor(out, parents=(a, b), backward=backward)


def _unary(a, out_data, da):
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(da(g))

    return Tensor(out_data, parents=(a,), backward=backward)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _unary(a, a.data * mask, lambda g: g * mask)


def sigmoid(a):
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    return _unary(a, s, lambda g: g * s * (1.0 - s))


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _unary(a, t, lambda g: g * (1.0 - t * t))


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    return _unary(a, e, lambda g: g * e)


def sqrt(a):
    a = as_tensor(a)
    s = np.sqrt(a.data)
    return _unary(a, s, lambda g: g * 0.5 / s)


def square(a):
    a = as_tensor(a)
    return _unary(a, a.data * a.data, lambda g: g * 2.0 * a.data)


def asin(a):
    a = as_tensor(a)
    return _unary(a, np.arcsin(a.data), lambda g: g / np.sqrt(1.0 - a.data * a.data))


def t_abs(a):
    a = as_tensor(a)
    s = np.sign(a.data)
    return _unary(a, np.abs(a.data), lambda g: g * s)


def t_sum(a, axis=None):
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return Tensor(out, parents=(a,), backward=backward)


def t_mean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return t_sum(a, axis=axis) * (1.0 / n)


def t_max(a):
    """Reduction max over all elements; argmax subgradient."""
    a = as_tensor(a)
    idx = np.unravel_index(np.argmax(a.data), a.data.shape)

    def backward(g):
        if a.requires_grad:
            full = np.zeros(a.data.shape)
            full[idx] = g
            a._accumulate(full)

    return Tensor(a.data[idx], parents=(a,), backward=backward)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data
    return _binary(
        a, b, np.maximum(a.data, b.data), lambda g: g * pick_a, lambda g: g * ~pick_a
    )


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return _binary(
        a, b, np.minimum(a.data, b.data), lambda g: g * pick_a, lambda g: g * ~pick_a
    )


def concat(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accumulate(g[tuple(sl)])

    return Tensor(out, parents=tuple(parts), backward=backward)


def stack(parts):
    """Stack scalars/vectors along a new leading axis."""
    parts = [as_tensor(p) for p in parts]
    out = np.stack([p.data for p in parts])

    def backward(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p._accumulate(g[i])

    return Tensor(out, parents=tuple(parts), backward=backward)


def take(a, idx):
    """Basic/advanced indexing with scatter-add backward."""
    a = as_tensor(a)
    out = a.data[idx]

    def backward(g):
        if a.requires_grad:
            full = np.zeros(a.data.shape)
            np.add.at(full, idx, g)
            a._accumulate(full)

    return Tensor(out, parents=(a,), backward=backward)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape
    return _unary(a, a.data.reshape(shape), lambda g: g.reshape(old))


def _im2col(x, kh, kw, stride, pad):
    c, h, w = x.shape
    hp = (h + 2 * pad - kh) // stride + 1
    wp = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c * kh * kw, hp * wp))
    n = 0
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                patch = xp[ci, i : i + stride * hp : stride, j : j + stride * wp : stride]
                cols[n] = patch.ravel()
                n += 1
    return cols, hp, wp


def _col2im(cols, x_shape, kh, kw, stride, pad):
    c, h, w = x_shape
    hp = (h + 2 * pad - kh) // stride + 1
    wp = (w + 2 * pad - kw) // stride + 1
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad))
    n = 0
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                xp[ci, i : i + stride * hp : stride, j : j + stride * wp : stride] += (
                    cols[n].reshape(hp, wp)
                )
                n += 1
    return xp[:, pad : pad + h, pad : pad + w]


def conv2d(x, weight, bias, stride=2, pad=1):
    """3x3 convolution: x (C,H,W), weight (O,C,3,3), bias (O,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    o, c, kh, kw = weight.data.shape
    cols, hp, wp = _im2col(x.data, kh, kw, stride, pad)
    wmat = weight.data.reshape(o, c * kh * kw)
    out = (wmat @ cols + bias.data[:, None]).reshape(o, hp, wp)

    def backward(g):
        gm = g.reshape(o, hp * wp)
        if weight.requires_grad:
            weight._accumulate((gm @ cols.T).reshape(weight.data.shape))
        if bias.requires_grad:
            bias._accumulate(gm.sum(axis=1))
        if x.requires_grad:
            gcols = wmat.T @ gm
            x._accumulate(_col2im(gcols, x.data.shape, kh, kw, stride, pad))

    return Tensor(out, parents=(x, weight, bias), backward=backward)


# ---------------------------------------------------------------------------
# quaternion helpers on (4,) tensors, Hamilton convention (w, x, y, z)

_CONJ = np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    aw, ax, ay, az = a[0], a[1], a[2], a[3]
    bw, bx, by, bz = b[0], b[1], b[2], b[3]
    return stack(
        [
            (aw * bw - ax * bx) - (ay * by + az * bz),
            (aw * bx + ax * bw) + (ay * bz - az * by),
            (aw * by + ay * bw) + (az * bx - ax * bz),
            (aw * bz + az * bw) + (ax * by - ay * bx),
        ]
    )


def quat_conj(q) -> Tensor:
    return mul(q, _CONJ)


def quat_normalize(q) -> Tensor:
    return div(q, sqrt(t_sum(square(q))))


def quat_canonical(q) -> Tensor:
    """Value-level sign flip to w >= 0 (constant factor, differentiable)."""
    q = as_tensor(q)
    return q if q.data[0] >= 0.0 else mul(q, -1.0)


def quat_rotate_rays(q, rays: np.ndarray) -> Tensor:
    """R(q) applied to constant rays (N,3); returns (3,N) tensor."""
    q = as_tensor(q)
    w, x, y, z = q[0], q[1], q[2], q[3]
    rx, ry, rz = rays[:, 0], rays[:, 1], rays[:, 2]
    # t = 2 u x v, out = v + w t + u x t  with u = (x, y, z)
    tx = (y * rz - z * ry) * 2.0
    ty = (z * rx - x * rz) * 2.0
    tz = (x * ry - y * rx) * 2.0
    ox = rx + (w * tx + (y * tz - z * ty))
    oy = ry + (w * ty + (z * tx - x * tz))
    oz = rz + (w * tz + (x * ty - y * tx))
    return stack([ox, oy, oz])  # (3, N)


def quat_rotate_rays_inv(q, rays: np.ndarray) -> Tensor:
    """R(q)^T applied to constant rays (N,3); returns (3,N) tensor."""
    return quat_rotate_rays(quat_conj(q), rays)


def slerp_t(qa, qb, u: float) -> Tensor:
    """Differentiable SLERP with the same endpoint convention as rotmath.

    Near-parallel inputs take a normalized-lerp branch (relative value
    error below 1e-9 at the 1e-3 rad threshold), keeping gradients
    finite where the trig form degenerates.
    """
    qa, qb = as_tensor(qa), as_tensor(qb)
    d = float(np.dot(qa.data, qb.data))
    if d < 0.0:
        qb = mul(qb, -1.0)
        d = -d
    if u == 0.0:
        return qa
    if u == 1.0:
        return qb
    theta = float(np.arccos(min(d, 1.0)))
    if theta < 1e-3:
        return quat_normalize(add(mul(qa, 1.0 - u), mul(qb, u)))
    # after the sign flip d >= 0, so theta <= pi/2 and asin(sin) is exact
    dot_t = t_sum(mul(qa, qb))
    theta_t = asin_clamped(sqrt(maximum(1.0 - square(dot_t), 1e-30)))
    s = sin_t(theta_t)
    ca = div(sin_t(mul(theta_t, 1.0 - u)), s)
    cb = div(sin_t(mul(theta_t, u)), s)
    return add(mul(qa, ca), mul(qb, cb))


def sin_t(a) -> Tensor:
    a = as_tensor(a)
    c = np.cos(a.data)
    return _unary(a, np.sin(a.data), lambda g: g * c)


def asin_clamped(a) -> Tensor:
    a = as_tensor(a)
    v = np.clip(a.data, -1.0, 1.0)
    denom = np.sqrt(np.maximum(1.0 - v * v, 1e-30))
    return _unary(a, np.arcsin(v), lambda g: g / denom)
