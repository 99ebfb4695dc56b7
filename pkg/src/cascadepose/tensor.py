"""Dense tensors over numpy with reverse-mode automatic differentiation.

Every differentiable primitive records its inputs and a backward closure on
the output tensor; ``Tensor.backward`` topologically sorts the implicit tape
and accumulates gradients into every reachable tensor that requires them.
The primitive catalog is deliberately small: exactly what the forward path
of the cascade needs, each one verified against finite differences.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_grad_enabled = True


class no_grad:
    """Context manager that suppresses tape recording (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_inputs", "_backward")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=None if isinstance(data, np.ndarray) else np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._inputs = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_wrap(other, self), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other, self), mul(self, -1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=self.data.dtype))

    def __rtruediv__(self, other):
        return mul(reciprocal(self), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    @property
    def T(self):
        return transpose(self)

    # -- backward ---------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for inp in node._inputs:
                if inp.requires_grad and id(inp) not in visited:
                    stack.append((inp, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def _wrap(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data, inputs, backward):
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._inputs = tuple(t for t in inputs if t.requires_grad)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gd, sd) in enumerate(zip(g.shape, shape)):
        if sd == 1 and gd != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


# -- elementwise primitives -----------------------------------------------


def add(a, b):
    a = _wrap(a)
    b = _wrap(b, a)
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b):
    a = _wrap(a)
    b = _wrap(b, a)
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def reciprocal(a):
    a = _wrap(a)
    out_data = 1.0 / a.data

    def backward(g):
        _accum(a, -g * out_data * out_data)

    return _make(out_data, (a,), backward)


def relu(a):
    a = _wrap(a)
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward)


def sigmoid(a):
    a = _wrap(a)
    out_data = np.empty_like(a.data)
    pos = a.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def exp(a):
    a = _wrap(a)
    out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), backward)


def log(a):
    a = _wrap(a)
    out_data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make(out_data, (a,), backward)


def sqrt(a):
    a = _wrap(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * 0.5 / out_data)

    return _make(out_data, (a,), backward)


def absolute(a):
    a = _wrap(a)

    def backward(g):
        _accum(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), backward)


def maximum(a, b):
    a = _wrap(a)
    b = _wrap(b, a)
    mask = a.data >= b.data

    def backward(g):
        _accum(a, _unbroadcast(g * mask, a.data.shape))
        _accum(b, _unbroadcast(g * ~mask, b.data.shape))

    return _make(np.where(mask, a.data, b.data), (a, b), backward)


def minimum(a, b):
    a = _wrap(a)
    b = _wrap(b, a)
    mask = a.data <= b.data

    def backward(g):
        _accum(a, _unbroadcast(g * mask, a.data.shape))
        _accum(b, _unbroadcast(g * ~mask, b.data.shape))

    return _make(np.where(mask, a.data, b.data), (a, b), backward)


# -- reductions and shape ops ---------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(out_data, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, *shape):
    a = _wrap(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a, *axes):
    a = _wrap(a)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)

    def backward(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), backward)


def index(a, key):
    a = _wrap(a)

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[key] = g
        _accum(a, buf)

    return _make(a.data[key], (a,), backward)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis=0):
    return concat([reshape(t, t.data.shape[:axis] + (1,) + t.data.shape[axis:]) for t in map(_wrap, tensors)], axis=axis)


def gather(a, idx, axis=0):
    """Select slices of ``a`` along ``axis`` by an integer index array."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, (slice(None),) * axis + (idx,), g)
        _accum(a, buf)

    return _make(np.take(a.data, idx, axis=axis), (a,), backward)


def take_per_row(a, cols):
    """out[i] = a[i, cols[i]] for a 2-D tensor."""
    a = _wrap(a)
    if a.data.ndim != 2:
        raise DimensionError(f"take_per_row expects 2-D input, got {a.data.shape}")
    cols = np.asarray(cols, dtype=np.intp)
    rows = np.arange(a.data.shape[0])

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, (rows, cols), g)
        _accum(a, buf)

    return _make(a.data[rows, cols], (a,), backward)


# -- linear algebra -------------------------------------------------------


def matmul(a, b):
    a = _wrap(a)
    b = _wrap(b, a)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.data.shape} x {b.data.shape}")

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


# -- neural-net primitives ------------------------------------------------


def softmax(a, axis=-1):
    a = _wrap(a)
    if np.isnan(a.data).any():
        raise NumericError("softmax input contains NaN")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _make(out_data, (a,), backward)


def log_softmax(a, axis=-1):
    a = _wrap(a)
    if np.isnan(a.data).any():
        raise NumericError("log_softmax input contains NaN")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    sm = np.exp(out_data)

    def backward(g):
        _accum(a, g - sm * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), backward)


def layer_norm(a, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    a = _wrap(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv
    n = a.data.shape[-1]

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        _accum(a, inv * (g - gm - y * gym))

    return _make(y, (a,), backward)


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D convolution on a single image [Cin,H,W] with kernel [Cout,Cin,kh,kw]."""
    x = _wrap(x)
    w = _wrap(w)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise DimensionError(f"conv2d expects [C,H,W] and [O,C,kh,kw], got {x.data.shape}, {w.data.shape}")
    if x.data.shape[0] != w.data.shape[1]:
        raise DimensionError(f"conv2d channel mismatch: {x.data.shape} vs {w.data.shape}")
    sh = sw = int(stride)
    ph = pw = int(padding)
    cin, h, width = x.data.shape
    cout, _, kh, kw = w.data.shape
    hout = (h + 2 * ph - kh) // sh + 1
    wout = (width + 2 * pw - kw) // sw + 1
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((cin, kh, kw, hout, wout), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i : i + sh * hout : sh, j : j + sw * wout : sw]
    out_data = np.einsum("ocij,cijhw->ohw", w.data, cols, optimize=True)
    if b is not None:
        b = _wrap(b)
        out_data = out_data + b.data[:, None, None]
    inputs = (x, w) if b is None else (x, w, b)

    def backward(g):
        _accum(w, np.einsum("ohw,cijhw->ocij", g, cols, optimize=True))
        if b is not None:
            _accum(b, g.sum(axis=(1, 2)))
        if x.requires_grad:
            dcols = np.einsum("ocij,ohw->cijhw", w.data, g, optimize=True)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + sh * hout : sh, j : j + sw * wout : sw] += dcols[:, i, j]
            _accum(x, dxp[:, ph : ph + h, pw : pw + width])

    return _make(out_data, inputs, backward)


def bilinear_sample(u, gx, gy):
    """Bilinear sampling of feature map ``u`` [C,H,W] at points (gx, gy).

    ``gx``/``gy`` are 1-D tensors in source pixel coordinates. Neighbors
    falling outside the map contribute zero. Gradients flow to the map and
    to both coordinate vectors.
    """
    u = _wrap(u)
    gx = _wrap(gx)
    gy = _wrap(gy)
    if u.data.ndim != 3:
        raise DimensionError(f"bilinear_sample expects [C,H,W] map, got {u.data.shape}")
    c, h, w = u.data.shape
    x = gx.data.astype(np.float64)
    y = gy.data.astype(np.float64)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    corners = []
    for yi, dwy in ((y0, -(1.0)), (y0 + 1, 1.0)):
        wy = 1.0 - np.abs(y - yi)
        for xi, dwx in ((x0, -1.0), (x0 + 1, 1.0)):
            wx = 1.0 - np.abs(x - xi)
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            xc = np.clip(xi, 0, w - 1)
            yc = np.clip(yi, 0, h - 1)
            uv = u.data[:, yc, xc] * valid  # [C,P]
            corners.append((uv, wx, wy, dwx, dwy, valid, xc, yc))
    out_data = np.zeros((c, x.size), dtype=u.data.dtype)
    for uv, wx, wy, _, _, _, _, _ in corners:
        out_data += uv * (wx * wy)

    def backward(g):
        if u.requires_grad:
            du = np.zeros((c, h * w), dtype=u.data.dtype)
            rows = np.arange(c)[:, None]
            for _, wx, wy, _, _, valid, xc, yc in corners:
                v = np.flatnonzero(valid)
                if v.size:
                    np.add.at(du, (rows, (yc[v] * w + xc[v])[None, :]), g[:, v] * (wx[v] * wy[v]))
            _accum(u, du.reshape(c, h, w))
        if gx.requires_grad:
            dx = np.zeros_like(x)
            for uv, wx, wy, dwx, _, _, _, _ in corners:
                dx += (g * uv).sum(axis=0) * (dwx * wy)
            _accum(gx, dx.astype(gx.data.dtype))
        if gy.requires_grad:
            dy = np.zeros_like(y)
            for uv, wx, wy, _, dwy, _, _, _ in corners:
                dy += (g * uv).sum(axis=0) * (dwy * wx)
            _accum(gy, dy.astype(gy.data.dtype))

    return _make(out_data, (u, gx, gy), backward)


def parameter(data, dtype=np.float64, rng=None, scale=None, shape=None):
    """Create a trainable tensor. If ``data`` is None, draw zero-mean gaussian."""
    if data is None:
        data = rng.normal(0.0, scale, size=shape)
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)
