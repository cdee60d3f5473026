"""Dense tensors with a reverse-mode tape.

Every op builds its output eagerly with numpy and records a closure that maps
the output gradient to the gradients of its parents. ``backward`` walks the
recorded graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError

_DTYPE = np.float32
_DEBUG = False


def default_dtype():
    return _DTYPE


def set_default_dtype(dtype) -> None:
    global _DTYPE
    _DTYPE = np.dtype(dtype).type


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for new tensors (``"double"`` or ``"single"``)."""
    global _DTYPE
    prev = _DTYPE
    _DTYPE = {"double": np.float64, "single": np.float32}.get(dtype, dtype)
    try:
        yield
    finally:
        _DTYPE = prev


def set_debug(flag: bool) -> None:
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DTYPE)
        if _DEBUG and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite value in tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # ---- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # ---- operators ---------------------------------------------------------
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], bw: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite value produced by {op}")
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = bw
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    return a, b


# ---- backward ------------------------------------------------------------

def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every ``requires_grad`` leaf."""
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ContractError("root does not participate in the tape")

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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)), "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _make(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def tabs(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.abs(ad), (a,), lambda g: (g * np.sign(ad),), "abs")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope).astype(a.dtype)
    return _make(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


# ---- reductions and shape ops ---------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    shape, dt = a.shape, a.dtype

    def bw(g):
        out = np.zeros(shape, dtype=dt)
        if _is_basic(idx):
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), bw, "getitem")


def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(ts)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(np.concatenate([t.data for t in ts], axis=axis), ts,
                 lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), bw, "matmul")


def l2_norm(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return sqrt(tsum(a * a, axis, keepdims))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    soft = np.exp(out)
    return _make(out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),), "log_softmax")


# ---- convolution family ---------------------------------------------------

def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(B, C, Ho, Wo, k, k) strided view over a padded input."""
    v = sliding_window_view(xp, (k, k), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def _fold(cols: np.ndarray, xshape: tuple[int, ...], k: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of the window view: scatter-add (C, k, k, B, Ho, Wo) back onto [B,C,H,W]."""
    B, C, H, W = xshape
    Ho, Wo = cols.shape[4], cols.shape[5]
    out = np.zeros((C, B, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += cols[:, i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out.transpose(1, 0, 2, 3)


def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(xd: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """[B,C,H,W] -> (C*k*k, B*Ho*Wo) with spatial positions innermost."""
    B, C = xd.shape[:2]
    cols = _windows(_pad(xd, padding), k, stride)  # B C Ho Wo k k
    Ho, Wo = cols.shape[2], cols.shape[3]
    return cols.transpose(1, 4, 5, 0, 2, 3).reshape(C * k * k, B * Ho * Wo), Ho, Wo


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [B,C,H,W] with [O,C,k,k] lowered to one GEMM."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError("conv2d expects 4-d input and kernel")
    B, C, H, W = x.shape
    O, Ck, kh, kw = w.shape
    if C != Ck:
        raise DimensionError(f"input has {C} channels, kernel expects {Ck}")
    if kh != kw:
        raise DimensionError("only square kernels are supported")
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    k = kh
    if k > H + 2 * padding or k > W + 2 * padding:
        raise DimensionError(f"kernel {k} larger than padded input {H + 2 * padding}x{W + 2 * padding}")
    mat, Ho, Wo = _im2col(x.data, k, stride, padding)
    wmat = w.data.reshape(O, C * k * k)
    out = (wmat @ mat).reshape(O, B, Ho, Wo)
    if b is not None:
        out += b.data.reshape(O, 1, 1, 1)
    out = out.transpose(1, 0, 2, 3)
    xshape = x.shape

    def bw(g):
        gm = g.transpose(1, 0, 2, 3).reshape(O, B * Ho * Wo)
        gw = (gm @ mat.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = _fold((wmat.T @ gm).reshape(C, k, k, B, Ho, Wo), xshape, k, stride, padding)
        if b is None:
            return gx, gw
        return gx, gw, gm.sum(axis=1)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw, "conv2d")


def conv2d_naive(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Direct six-loop convolution; kept as the reference for ``conv2d``."""
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho, Wo = conv_out_size(H, k, stride, padding), conv_out_size(W, k, stride, padding)
    out = np.zeros((B, O, Ho, Wo), dtype=np.result_type(x, w))
    for n in range(B):
        for o in range(O):
            for y in range(Ho):
                for z in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for i in range(k):
                            for j in range(k):
                                acc += xp[n, c, y * stride + i, z * stride + j] * w[o, c, i, j]
                    out[n, o, y, z] = acc
    return out


def unfold(x: Tensor, k: int) -> Tensor:
    """Dense stride-1 k x k patches: [B,C,H,W] -> [B, m, C*k*k], m = (H-k+1)(W-k+1).

    Patches run in row-major origin order; each vector is ordered (channel, row, col).
    """
    B, C, H, W = x.shape
    if k > H or k > W:
        raise DimensionError(f"patch size {k} exceeds map {H}x{W}")
    cols = _windows(x.data, k, 1)
    Ho, Wo = cols.shape[2], cols.shape[3]
    out = cols.transpose(0, 2, 3, 1, 4, 5).reshape(B, Ho * Wo, C * k * k)
    xshape = x.shape

    def bw(g):
        gcols = g.reshape(B, Ho, Wo, C, k, k).transpose(3, 4, 5, 0, 1, 2)
        return (_fold(gcols, xshape, k, 1, 0),)

    return _make(out, (x,), bw, "unfold")


def avg_pool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    stride = k if stride is None else stride
    B, C, H, W = x.shape
    if k > H or k > W:
        raise DimensionError(f"pool size {k} exceeds map {H}x{W}")
    cols = _windows(x.data, k, stride)
    out = cols.mean(axis=(4, 5))
    Ho, Wo = out.shape[2], out.shape[3]
    xshape = x.shape

    def bw(g):
        gc = np.broadcast_to((g / (k * k)).transpose(1, 0, 2, 3)[:, None, None], (C, k, k, B, Ho, Wo))
        return (_fold(gc, xshape, k, stride, 0),)

    return _make(out, (x,), bw, "avg_pool2d")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    B, C, H, W = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    return _make(out, (x,),
                 lambda g: (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),), "upsample")


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=(2, 3), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return _make(xhat, (x,), bw, "instance_norm")


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
