"""Dense float64 tensors with tape-based reverse-mode autodiff.

Every value flowing through the losses and networks is a Tensor wrapping a
contiguous numpy float64 array. Operations record a vector-Jacobian-product
closure when any operand requires gradients; backward() walks the recorded
graph in reverse topological order. No higher-order derivatives.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np


class ContractError(ValueError):
    """A caller violated an operation's precondition (shape, missing grad, ...)."""


class DomainError(ValueError):
    """An operand is outside the mathematical domain of the operation."""


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _op(data, parents, vjp):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        return out

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
        return float(self.data.reshape(()))  # any size-1 array

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------------

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

    def __getitem__(self, key):
        return _getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum out broadcast dimensions so grad matches the original shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError as exc:
        raise ContractError(f"shapes {a.data.shape} and {b.data.shape} do not broadcast") from exc


# -- elementwise arithmetic --------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return Tensor._op(a.data + b.data, (a, b),
                      lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return Tensor._op(a.data - b.data, (a, b),
                      lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return Tensor._op(a.data * b.data, (a, b),
                      lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                 _unbroadcast(g * a.data, b.data.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return Tensor._op(a.data / b.data, (a, b),
                      lambda g: (_unbroadcast(g / b.data, a.data.shape),
                                 _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def neg(a):
    a = as_tensor(a)
    return Tensor._op(-a.data, (a,), lambda g: (-g,))


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return Tensor._op(y, (a,), lambda g: (g * y,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    return Tensor._op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative value")
    y = np.sqrt(a.data)
    return Tensor._op(y, (a,), lambda g: (g * 0.5 / np.maximum(y, 1e-300),))


def square(a):
    a = as_tensor(a)
    return Tensor._op(a.data * a.data, (a,), lambda g: (g * 2.0 * a.data,))


def power(a, p):
    """Elementwise a**p for a scalar exponent p >= 1 (keeps 0**(p-1) finite)."""
    a = as_tensor(a)
    p = float(p)
    if p < 1.0:
        raise DomainError("power() supports exponents >= 1 only")
    if np.any(a.data < 0) and p != round(p):
        raise DomainError("fractional power of negative value")
    y = np.power(a.data, p)
    return Tensor._op(y, (a,), lambda g: (g * p * np.power(a.data, p - 1.0),))


def tabs(a):
    a = as_tensor(a)
    return Tensor._op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return Tensor._op(y, (a,), lambda g: (g * y * (1.0 - y),))


def softplus(a):
    a = as_tensor(a)
    y = np.logaddexp(0.0, a.data)
    return Tensor._op(y, (a,), lambda g: (g / (1.0 + np.exp(-a.data)),))


def relu(a):
    a = as_tensor(a)
    m = a.data > 0
    return Tensor._op(a.data * m, (a,), lambda g: (g * m,))


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    m = a.data >= b.data
    return Tensor._op(np.maximum(a.data, b.data), (a, b),
                      lambda g: (_unbroadcast(g * m, a.data.shape),
                                 _unbroadcast(g * ~m, b.data.shape)))


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    m = a.data <= b.data
    return Tensor._op(np.minimum(a.data, b.data), (a, b),
                      lambda g: (_unbroadcast(g * m, a.data.shape),
                                 _unbroadcast(g * ~m, b.data.shape)))


def clamp(a, lo, hi):
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor._op(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def softmax(a, axis):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._op(y, (a,), vjp)


# -- reductions, shaping -----------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            for ax in sorted(ax % a.data.ndim for ax in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return Tensor._op(y, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    return tsum(a, axis=axis, keepdims=keepdims) / float(n)


def reshape(a, *shape):
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.data.shape
    return Tensor._op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)
    return Tensor._op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    y = np.concatenate([t.data for t in ts], axis=axis)

    def vjp(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return Tensor._op(y, tuple(ts), vjp)


def _getitem(a, key):
    a = as_tensor(a)
    y = a.data[key]

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return Tensor._op(np.array(y, copy=True), (a,), vjp)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ContractError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    return Tensor._op(a.data @ b.data, (a, b),
                      lambda g: (g @ b.data.T, a.data.T @ g))


# -- spatial kernels ---------------------------------------------------------

def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D convolution (cross-correlation): x (Cin,H,W), w (Cout,Cin,kh,kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4 or x.data.shape[0] != w.data.shape[1]:
        raise ContractError(f"conv2d shape mismatch: x {x.data.shape}, w {w.data.shape}")
    cout, cin, kh, kw = w.data.shape
    sh = sw = int(stride)
    p = int(padding)
    _, h, wd = x.data.shape
    ho = (h + 2 * p - kh) // sh + 1
    wo = (wd + 2 * p - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ContractError("conv2d output would be empty")
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    cols = np.empty((kh, kw, cin, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[i, j] = xp[:, i:i + sh * ho:sh, j:j + sw * wo:sw]
    cols2 = cols.reshape(kh * kw * cin, ho * wo)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(cout, kh * kw * cin)
    y = (wmat @ cols2).reshape(cout, ho, wo)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        y = y + b.data[:, None, None]
        parents = (x, w, b)

    def vjp(g):
        gmat = g.reshape(cout, ho * wo)
        dwmat = gmat @ cols2.T
        dw = dwmat.reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
        dcols = (wmat.T @ gmat).reshape(kh, kw, cin, ho, wo)
        dxp = np.zeros((cin, h + 2 * p, wd + 2 * p))
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + sh * ho:sh, j:j + sw * wo:sw] += dcols[i, j]
        dx = dxp[:, p:p + h, p:p + wd] if p else dxp
        if b is not None:
            return (dx, dw, g.sum(axis=(1, 2)))
        return (dx, dw)

    return Tensor._op(y, parents, vjp)


def upsample_nearest(x, factor):
    x = as_tensor(x)
    f = int(factor)
    c, h, w = x.data.shape
    y = np.repeat(np.repeat(x.data, f, axis=1), f, axis=2)

    def vjp(g):
        return (g.reshape(c, h, f, w, f).sum(axis=(2, 4)),)

    return Tensor._op(y, (x,), vjp)


def avg_pool2d(x, k):
    x = as_tensor(x)
    c, h, w = x.data.shape
    if h % k or w % k:
        raise ContractError("avg_pool2d requires dimensions divisible by the kernel")
    ho, wo = h // k, w // k
    y = x.data.reshape(c, ho, k, wo, k).mean(axis=(2, 4))

    def vjp(g):
        return (np.repeat(np.repeat(g, k, axis=1), k, axis=2) / (k * k),)

    return Tensor._op(y, (x,), vjp)


def max_pool2d(x, k):
    x = as_tensor(x)
    c, h, w = x.data.shape
    if h % k or w % k:
        raise ContractError("max_pool2d requires dimensions divisible by the kernel")
    ho, wo = h // k, w // k
    windows = x.data.reshape(c, ho, k, wo, k).transpose(0, 1, 3, 2, 4).reshape(c, ho, wo, k * k)
    idx = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        dw = np.zeros((c, ho, wo, k * k))
        np.put_along_axis(dw, idx[..., None], g[..., None], axis=-1)
        return (dw.reshape(c, ho, wo, k, k).transpose(0, 1, 3, 2, 4).reshape(c, h, w),)

    return Tensor._op(y, (x,), vjp)


def _box_sum_same(arr, k):
    """Sum over a k x k window centred on each pixel, zero padding outside."""
    r = k // 2
    h, w = arr.shape[-2:]
    padded = np.pad(arr, [(0, 0)] * (arr.ndim - 2) + [(r + 1, r), (r + 1, r)])
    cs = padded.cumsum(axis=-2).cumsum(axis=-1)
    out = (cs[..., k:, k:] - cs[..., :-k, k:] - cs[..., k:, :-k] + cs[..., :-k, :-k])
    return out[..., :h, :w]


def box_mean(x, k):
    """Local k x k mean with zero padding ('same'); k odd. Self-adjoint."""
    x = as_tensor(x)
    if k % 2 == 0:
        raise ContractError("box_mean kernel must be odd")
    y = _box_sum_same(x.data, k) / float(k * k)
    return Tensor._op(y, (x,), lambda g: (_box_sum_same(g, k) / float(k * k),))


def box_mean_array(arr, k):
    """Numpy-only variant of box_mean for constant inputs."""
    return _box_sum_same(np.asarray(arr, dtype=np.float64), k) / float(k * k)


# -- backward pass -----------------------------------------------------------

def backward(loss, grad=None):
    """Accumulate d(loss)/d(leaf) into .grad of every requires_grad leaf."""
    if loss.data.size != 1:
        raise ContractError("backward() requires a scalar loss")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and (p._vjp is not None or p.requires_grad):
                stack.append((p, False))
    adjoint = {id(loss): np.ones_like(loss.data) if grad is None else _as_array(grad)}
    for node in reversed(topo):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is not None:
            for p, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not (p.requires_grad or p._vjp is not None):
                    continue
                prev = adjoint.get(id(p))
                adjoint[id(p)] = pg if prev is None else prev + pg
        elif node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g


def grad_check(f, point, eps=1e-5):
    """Max relative error between analytic gradient of f and central differences.

    f maps a Tensor to a scalar Tensor; point is an ndarray evaluation point.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    out = f(x)
    backward(out)
    analytic = x.grad.reshape(-1).copy()
    flat = x.data.reshape(-1)
    numeric = np.empty_like(analytic)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(x.data)).data)
        flat[i] = orig - eps
        lo = float(f(Tensor(x.data)).data)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))


# -- optimizer ---------------------------------------------------------------

class AdamW:
    """AdamW with decoupled weight decay applied before the moment update."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise ContractError("adamw step with missing gradient")
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# -- checkpoint serialization -------------------------------------------------

_CKPT_MAGIC = b"CAMOTTA\x00"
_CKPT_VERSION = 1


def save_checkpoint(named_params, path):
    """Write (name, shape, float64 little-endian values) records with a header."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        items = list(named_params.items())
        fh.write(struct.pack("<Q", len(items)))
        for name, value in items:
            arr = value.data if isinstance(value, Tensor) else _as_array(value)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into an ordered name -> ndarray map."""
    out = OrderedDict()
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ContractError(f"not a checkpoint file: {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CKPT_VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<Q", fh.read(8))
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            out[name] = np.array(data, dtype=np.float64)
    return out
