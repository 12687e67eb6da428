"""Dense real/complex tensors with reverse-mode automatic differentiation.

Values live in float64 numpy arrays.  A complex tensor stores its real and
imaginary parts as two planes on axis ``-3`` (so an image batch is laid out
``(N, 2, H, W)``, which is also the 2-channel network layout).  All
derivatives are taken over this real representation.

Every primitive records a node on its output when any input tracks
gradients; :func:`backward` walks those nodes in reverse execution order.
"""
from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

REAL = "real64"
COMPLEX = "complex"

_state = threading.local()
_counter = itertools.count()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (thread-local)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class GraphError(RuntimeError):
    pass


class Tensor:
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, dtype: str = REAL, name: str | None = None):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            if np.iscomplexobj(arr):
                raise TypeError("pass complex data through Tensor.from_complex")
            arr = arr.astype(np.float64)
        if dtype not in (REAL, COMPLEX):
            raise ValueError(f"unknown dtype {dtype!r}")
        if dtype == COMPLEX and (arr.ndim < 3 or arr.shape[-3] != 2):
            raise ValueError(f"complex tensor needs a size-2 plane axis at -3, got shape {arr.shape}")
        self.data = arr
        self.dtype = dtype
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        # graph bookkeeping; set only on op outputs
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._seq = -1
        self._consumed = False

    # construction helpers -------------------------------------------------
    @classmethod
    def from_complex(cls, z, requires_grad: bool = False) -> "Tensor":
        z = np.asarray(z)
        planes = np.stack([z.real, z.imag], axis=-3).astype(np.float64)
        return cls(planes, requires_grad=requires_grad, dtype=COMPLEX)

    def to_complex(self) -> np.ndarray:
        if self.dtype != COMPLEX:
            raise TypeError("tensor is real")
        return self.data[..., 0, :, :] + 1j * self.data[..., 1, :, :]

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_complex(self) -> bool:
        return self.dtype == COMPLEX

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar; implementations live in module-level functions -------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def make_node(data: np.ndarray, parents, backward, dtype: str = REAL) -> Tensor:
    """Wrap ``data`` as an op output; ``backward(g)`` returns one grad per parent (or None)."""
    out = Tensor(data, dtype=dtype)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._seq = next(_counter)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _sum_dtype(op: str, a: Tensor, b: Tensor) -> str:
    if a.dtype == b.dtype:
        return a.dtype
    # a real scalar or a broadcast of planes makes no sense for complex addition
    raise TypeError(f"{op}: cannot mix {a.dtype} and {b.dtype} operands (shapes {a.shape}, {b.shape})")


# elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    dtype = _sum_dtype("add", a, b) if a.ndim and b.ndim else (a.dtype if a.ndim else b.dtype)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), dtype)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    dtype = _sum_dtype("sub", a, b) if a.ndim and b.ndim else (a.dtype if a.ndim else b.dtype)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), dtype)


def mul(a, b) -> Tensor:
    """Elementwise product.  A complex operand may only be scaled by a real one."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    if a.is_complex and b.is_complex:
        raise TypeError("mul: complex-by-complex products need cmul")
    dtype = COMPLEX if (a.is_complex or b.is_complex) else REAL
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_node(ad * bd, (a, b), backward, dtype)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    if b.is_complex:
        raise TypeError("div: complex divisor not supported")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return make_node(out, (a, b), backward, a.dtype)


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_node(xd * xd, (x,), lambda g: (2.0 * xd * g,), x.dtype)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return make_node(out, (x,), lambda g: (g / (2.0 * out),), x.dtype)


def abs_(x: Tensor) -> Tensor:
    xd = x.data
    return make_node(np.abs(xd), (x,), lambda g: (g * np.sign(xd),), x.dtype)


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    pos = x.data > 0
    return make_node(np.where(pos, x.data, x.data * slope), (x,),
                     lambda g: (np.where(pos, g, g * slope),), x.dtype)


def huber(x: Tensor, delta: float = 1.0) -> Tensor:
    """Elementwise Huber penalty: x^2/2 inside |x| <= delta, linear outside."""
    xd = x.data
    ax = np.abs(xd)
    inside = ax <= delta
    out = np.where(inside, 0.5 * xd * xd, delta * (ax - 0.5 * delta))
    return make_node(out, (x,), lambda g: (g * np.where(inside, xd, delta * np.sign(xd)),), REAL)


def cabs(x: Tensor) -> Tensor:
    """Modulus of a complex tensor; the plane axis is removed."""
    if not x.is_complex:
        raise TypeError("cabs expects a complex tensor")
    re, im = x.data[..., 0, :, :], x.data[..., 1, :, :]
    mag = np.hypot(re, im)
    safe = np.where(mag > 0, mag, 1.0)

    def backward(g):
        gr = np.where(mag > 0, g * re / safe, 0.0)
        gi = np.where(mag > 0, g * im / safe, 0.0)
        return (np.stack([gr, gi], axis=-3),)

    return make_node(mag, (x,), backward, REAL)


def cmul_const(x: Tensor, c) -> Tensor:
    """Multiply a complex tensor by a constant complex array ``c``."""
    if not x.is_complex:
        raise TypeError("cmul_const expects a complex tensor")
    c = np.asarray(c)
    cr, ci = np.real(c).astype(np.float64), np.imag(c).astype(np.float64)
    re, im = x.data[..., 0, :, :], x.data[..., 1, :, :]
    out = np.stack([re * cr - im * ci, re * ci + im * cr], axis=-3)

    def backward(g):
        gr, gi = g[..., 0, :, :], g[..., 1, :, :]
        # transpose of the real 2x2 block is multiplication by conj(c)
        return (np.stack([_unbroadcast(gr * cr + gi * ci, re.shape),
                          _unbroadcast(-gr * ci + gi * cr, im.shape)], axis=-3),)

    return make_node(out, (x,), backward, COMPLEX)


# reductions and shape ops -------------------------------------------------

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64),
                     (x,), backward, REAL)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis, keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    out = x.data.reshape(shape)
    dtype = x.dtype if (out.ndim >= 3 and out.shape[-3] == 2 and x.is_complex) else REAL
    return make_node(out, (x,), lambda g: (g.reshape(old),), dtype)


def slice_(x: Tensor, index) -> Tensor:
    shape = x.shape

    basic = all(isinstance(i, (slice, int, type(Ellipsis), type(None)))
                for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        full = np.zeros(shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    out = np.array(x.data[index], dtype=np.float64)
    dtype = x.dtype if (x.is_complex and out.ndim >= 3 and out.shape[-3] == 2) else REAL
    return make_node(out, (x,), backward, dtype)


def pad(x: Tensor, widths) -> Tensor:
    """Zero padding; ``widths`` follows ``np.pad`` (one (before, after) per axis)."""
    widths = [tuple(w) for w in widths]
    if len(widths) != x.ndim:
        raise ValueError(f"pad: {len(widths)} pad widths for a rank-{x.ndim} tensor")
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, x.shape))
    return make_node(np.pad(x.data, widths), (x,), lambda g: (g[index],), x.dtype)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref))
                                     if i != axis % len(ref)):
            raise ValueError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                     lambda g: tuple(np.split(g, sizes, axis=axis)), REAL)


def stack_planes(re: Tensor, im: Tensor) -> Tensor:
    """Build a complex tensor from real and imaginary parts of shape (..., H, W)."""
    if re.shape != im.shape:
        raise ValueError(f"stack_planes: shapes {re.shape} and {im.shape} differ")
    return make_node(np.stack([re.data, im.data], axis=-3), (re, im),
                     lambda g: (g[..., 0, :, :], g[..., 1, :, :]), COMPLEX)


def as_complex(x: Tensor) -> Tensor:
    """Relabel a real (..., 2, H, W) tensor as complex planes (no data change)."""
    if x.ndim < 3 or x.shape[-3] != 2:
        raise ValueError(f"as_complex: need a size-2 axis at -3, got {x.shape}")
    return make_node(x.data, (x,), lambda g: (g,), COMPLEX)


def as_real(x: Tensor) -> Tensor:
    return make_node(x.data, (x,), lambda g: (g,), REAL)


# linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(ad @ bd, (a, b), backward, REAL)


# convolution --------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input, (O, C, k, k) kernel, square zero padding."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[2] != w.shape[3] or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d: incompatible input {x.shape} and kernel {w.shape}")
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    # channel-major copy so every tap below writes one contiguous block
    xt = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3))
    xp = np.pad(xt, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xt
    # im2col as (k*k*C, N*Ho*Wo) so the whole batch is a single GEMM
    cols = np.empty((k, k, c, n, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[i, j] = xp[:, :, i: i + (ho - 1) * stride + 1: stride, j: j + (wo - 1) * stride + 1: stride]
    cols = cols.reshape(k * k * c, n * ho * wo)
    wmat = np.ascontiguousarray(w.data.transpose(0, 2, 3, 1)).reshape(o, k * k * c)
    out = wmat @ cols
    if b is not None:
        b = as_tensor(b)
        if b.shape != (o,):
            raise ValueError(f"conv2d: bias shape {b.shape} does not match {o} output channels")
        out += b.data[:, None]
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gx = gw = gb = None
        g2 = np.ascontiguousarray(np.transpose(g, (1, 0, 2, 3))).reshape(o, n * ho * wo)
        if w.requires_grad:
            gw = (g2 @ cols.T).reshape(o, k, k, c).transpose(0, 3, 1, 2)
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=1)
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape(k, k, c, n, ho, wo)
            gxp = np.zeros(xp.shape)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i: i + (ho - 1) * stride + 1: stride,
                        j: j + (wo - 1) * stride + 1: stride] += dcols[i, j]
            if padding:
                gxp = gxp[:, :, padding: padding + h, padding: padding + wd]
            gx = gxp.transpose(1, 0, 2, 3)
        return (gx, gw) if b is None else (gx, gw, gb)

    return make_node(out, parents, backward, REAL)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of an NCHW tensor."""
    if x.ndim != 4:
        raise ValueError(f"upsample2: expected NCHW, got {x.shape}")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape
    return make_node(out, (x,),
                     lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),), x.dtype)


# Fourier transforms over complex planes -----------------------------------

def _require_planes(op: str, x: Tensor) -> None:
    if not x.is_complex or x.ndim < 3 or x.shape[-3] != 2:
        raise ValueError(f"{op}: needs complex plane storage (..., 2, H, W), got {x.dtype} {x.shape}")


def _planes_fft(data: np.ndarray, inverse: bool) -> np.ndarray:
    z = data[..., 0, :, :] + 1j * data[..., 1, :, :]
    fz = np.fft.ifft2(z, norm="ortho") if inverse else np.fft.fft2(z, norm="ortho")
    return np.stack([fz.real, fz.imag], axis=-3)


def fft2(x: Tensor) -> Tensor:
    """Orthonormal 2-D DFT over the last two axes."""
    _require_planes("fft2", x)
    return make_node(_planes_fft(x.data, False), (x,),
                     lambda g: (_planes_fft(g, True),), COMPLEX)


def ifft2(x: Tensor) -> Tensor:
    _require_planes("ifft2", x)
    return make_node(_planes_fft(x.data, True), (x,),
                     lambda g: (_planes_fft(g, False),), COMPLEX)


# backward pass ------------------------------------------------------------

def backward(loss: Tensor, inputs=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    ``inputs`` optionally lists leaves that must end up with a gradient; those
    not reachable from ``loss`` get zeros.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward already ran on this graph; rebuild the forward pass")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")

    # collect the graph; order by creation sequence (= execution order)
    nodes, leaves, seen, stack = [], [], set(), [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._backward is None:
            if t.requires_grad:
                leaves.append(t)
            continue
        nodes.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)
    nodes.sort(key=lambda t: t._seq, reverse=True)

    grads = {id(loss): np.ones_like(loss.data)}
    for node in nodes:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        contribs = node._backward(g)
        for parent, pg in zip(node._parents, contribs):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        # free the graph as we go; a second backward must fail loudly
        node._backward = _consumed_backward
        node._parents = ()
        node._consumed = True

    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    for t in inputs or ():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)


def _consumed_backward(g):
    raise GraphError("graph node reused after backward")
