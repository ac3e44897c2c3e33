"""Dense NHWC tensors with reverse-mode differentiation.

Only the operations the curve-map network needs are provided. Arrays are
laid out row-major as (h, w, c) or, batched, (n, h, w, c); every spatial op
accepts either rank and returns the rank it was given.

The differentiation record is the graph of ``Tensor`` objects itself: each
non-leaf keeps references to its parents and a closure mapping the output
gradient to parent gradients.  A graph must only be used from the thread
that built it.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

_GRAD_ENABLED = contextvars.ContextVar("grad_enabled", default=True)
_DTYPE = contextvars.ContextVar("dtype", default=np.float64)

LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible."""


def get_default_dtype():
    return _DTYPE.get()


def set_default_dtype(dtype) -> None:
    """Switch the precision used for new tensors (float64 or float32)."""
    dtype = np.dtype(dtype).type
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _DTYPE.set(dtype)


@contextlib.contextmanager
def default_dtype(dtype):
    token = _DTYPE.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.reset(token)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the differentiation graph."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


class Tensor:
    """An immutable numeric array plus its link into the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or get_default_dtype())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- basic properties ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self)))

    def __rsub__(self, other):
        return add(_lift(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("loss is not connected to any differentiable parameter")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
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
    return order


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if _GRAD_ENABLED.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), backward)


def reciprocal(a: Tensor) -> Tensor:
    y = 1.0 / a.data
    return _result(y, (a,), lambda g: (-g * y * y,))


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _result(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _result(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


def sigmoid(a: Tensor) -> Tensor:
    y = special.expit(a.data)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    ad = a.data
    scale = np.where(ad > 0, 1.0, slope).astype(ad.dtype)
    return _result(ad * scale, (a,), lambda g: (g * scale,))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    ad = a.data
    cdf = 0.5 * (1.0 + special.erf(ad / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * ad * ad) / math.sqrt(2.0 * math.pi)
    return _result(ad * cdf, (a,), lambda g: (g * (cdf + ad * pdf),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "gelu":
        return gelu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, 0.2)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# -- reductions and reshaping ------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# -- linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a = _lift(a)
    b = _lift(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(ad @ bd, (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward)


# -- spatial ops ------------------------------------------------------------------

def _as4d(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 4:
        return x, False
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    raise ShapeError(f"expected (h, w, c) or (n, h, w, c), got {x.shape}")


def _restore(y: Tensor, squeeze: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if squeeze else y


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[0], xp.shape[3]
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    # (n, ho, wo, c, k, k) -> rows ordered (ki, kj, c) to match kernel layout
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)


def _col2im(cols: np.ndarray, xp_shape, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp_shape[0], xp_shape[3]
    cols = cols.reshape(n, ho, wo, k, k, c)
    out = np.zeros(xp_shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, i : i + stride * (ho - 1) + 1 : stride,
                j : j + stride * (wo - 1) + 1 : stride] += cols[:, :, :, i, j]
    return out


def _dense_conv(xp, w, stride, ho, wo):
    k, _, cin, cout = w.shape
    cols = _im2col(xp, k, stride, ho, wo)
    out = cols @ w.reshape(k * k * cin, cout)
    return out.reshape(xp.shape[0], ho, wo, cout), cols


def _dense_conv_backward(g, cols, xp_shape, w, stride, ho, wo):
    k, _, cin, cout = w.shape
    g2 = g.reshape(-1, cout)
    gw = (cols.T @ g2).reshape(w.shape)
    gcols = g2 @ w.reshape(k * k * cin, cout).T
    return _col2im(gcols, xp_shape, k, stride, ho, wo), gw


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation without bias.

    ``w`` has shape (k, k, c_in // groups, c_out).  Output channel ``o``
    reads input group ``o // (c_out // groups)``.
    """
    x4, squeeze = _as4d(x)
    if w.ndim != 4 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"kernel must be (k, k, c_in/groups, c_out), got {w.shape}")
    if stride < 1 or pad < 0 or groups < 1:
        raise ValueError(f"invalid stride={stride}, pad={pad}, groups={groups}")
    n, h, wd, cin = x4.shape
    k, _, cin_g, cout = w.shape
    if cin % groups or cout % groups:
        raise ShapeError(f"channels c_in={cin}, c_out={cout} not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ShapeError(f"kernel expects {cin_g * groups} input channels, tensor has {cin} (dims {x4.shape})")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {k}x{k} larger than padded input {h}x{wd}")

    xd = x4.data
    wdat = w.data.astype(xd.dtype, copy=False)
    xp = np.pad(xd, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else xd
    cout_g = cout // groups

    if groups == 1:
        out, cols = _dense_conv(xp, wdat, stride, ho, wo)

        def backward(g):
            gxp, gw = _dense_conv_backward(g, cols, xp.shape, wdat, stride, ho, wo)
            return _crop(gxp, pad), gw

    elif cin_g == 1 and cout_g == 1:
        # depthwise: one k x k filter per channel
        out = np.zeros((n, ho, wo, cout), dtype=xd.dtype)
        sl = [(i, j, np.s_[:, i : i + stride * (ho - 1) + 1 : stride,
                          j : j + stride * (wo - 1) + 1 : stride])
              for i in range(k) for j in range(k)]
        for i, j, s in sl:
            out += xp[s] * wdat[i, j, 0]

        def backward(g):
            gxp = np.zeros_like(xp)
            gw = np.zeros_like(wdat)
            for i, j, s in sl:
                gw[i, j, 0] = np.einsum("nhwc,nhwc->c", xp[s], g)
                gxp[s] += g * wdat[i, j, 0]
            return _crop(gxp, pad), gw

    else:
        parts = []
        for gi in range(groups):
            xs = xp[..., gi * cin_g : (gi + 1) * cin_g]
            ws = wdat[..., gi * cout_g : (gi + 1) * cout_g]
            parts.append(_dense_conv(np.ascontiguousarray(xs), ws, stride, ho, wo))
        out = np.concatenate([p[0] for p in parts], axis=-1)

        def backward(g):
            gxp = np.zeros_like(xp)
            gw = np.zeros_like(wdat)
            for gi, (_, cols) in enumerate(parts):
                osl = slice(gi * cout_g, (gi + 1) * cout_g)
                isl = slice(gi * cin_g, (gi + 1) * cin_g)
                gx_g, gw_g = _dense_conv_backward(
                    np.ascontiguousarray(g[..., osl]), cols,
                    xp.shape[:3] + (cin_g,), wdat[..., osl], stride, ho, wo)
                gxp[..., isl] += gx_g
                gw[..., osl] = gw_g
            return _crop(gxp, pad), gw

    return _restore(_result(out, (x4, w), backward), squeeze)


def _crop(a: np.ndarray, pad: int) -> np.ndarray:
    if not pad:
        return a
    return a[:, pad:-pad, pad:-pad, :]


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """(h, w, c) -> (h/r, w/r, c*r*r); out[i, j, ch*r*r + di*r + dj] = x[i*r+di, j*r+dj, ch]."""
    x4, squeeze = _as4d(x)
    n, h, w, c = x4.shape
    if h % r or w % r:
        raise ShapeError(f"unshuffle by {r} needs h, w divisible by {r}, got {h}x{w}")

    def fwd(a):
        return a.reshape(n, h // r, r, w // r, r, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // r, w // r, c * r * r)

    def inv(g):
        return g.reshape(n, h // r, w // r, c, r, r).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)

    return _restore(_result(fwd(x4.data), (x4,), lambda g: (inv(g),)), squeeze)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`pixel_unshuffle`."""
    x4, squeeze = _as4d(x)
    n, h, w, c = x4.shape
    if c % (r * r):
        raise ShapeError(f"shuffle by {r} needs channels divisible by {r * r}, got {c}")
    co = c // (r * r)

    def fwd(a):
        return a.reshape(n, h, w, co, r, r).transpose(0, 1, 4, 2, 5, 3).reshape(n, h * r, w * r, co)

    def inv(g):
        return g.reshape(n, h, r, w, r, co).transpose(0, 1, 3, 5, 2, 4).reshape(n, h, w, c)

    return _restore(_result(fwd(x4.data), (x4,), lambda g: (inv(g),)), squeeze)


def pixel_shuffle_op(x: Tensor, r: int, direction: str) -> Tensor:
    if direction == "shuffle":
        return pixel_shuffle(x, r)
    if direction == "unshuffle":
        return pixel_unshuffle(x, r)
    raise ValueError(f"direction must be 'shuffle' or 'unshuffle', got {direction!r}")


def _normalize(x: np.ndarray, axes, eps: float):
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return xc * inv_std, inv_std


def _normalize_backward(gxhat, xhat, inv_std, axes):
    m1 = gxhat.mean(axis=axes, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=axes, keepdims=True)
    return inv_std * (gxhat - m1 - xhat * m2)


def layer_norm_channels(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize each pixel over its channel vector, then scale and shift."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},), got {gamma.shape}, {beta.shape}")
    xhat, inv_std = _normalize(x.data, -1, eps)
    gd = gamma.data
    red = tuple(range(x.ndim - 1))

    def backward(g):
        gx = _normalize_backward(g * gd, xhat, inv_std, -1)
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _result(xhat * gd + beta.data, (x, gamma, beta), backward)


def instance_norm(x: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Per-sample, per-channel normalization over the spatial axes."""
    x4, squeeze = _as4d(x)
    xhat, inv_std = _normalize(x4.data, (1, 2), eps)
    out = _result(xhat, (x4,), lambda g: (_normalize_backward(g, xhat, inv_std, (1, 2)),))
    return _restore(out, squeeze)


# -- gradients ------------------------------------------------------------------

def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Run reverse mode from ``loss`` and return one gradient per parameter.

    Parameters the loss does not depend on get a zero gradient.  Existing
    ``.grad`` values on ``params`` are cleared first.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    params = params or {}
    for p in params.values():
        p.grad = None
    if loss.requires_grad:
        loss.backward()
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}


@dataclass
class GradReport:
    max_abs_error: dict[str, float]
    max_rel_error: dict[str, float]
    h: float
    tol: float
    checked: dict[str, int] = field(default_factory=dict)
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.worst_rel_error < self.tol

    @property
    def worst_rel_error(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def failures(self) -> list[str]:
        return [k for k, v in self.max_rel_error.items() if not v < self.tol]


def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray | Tensor],
    h: float = 1e-4,
    tol: float = 1e-3,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
    analytic: Callable[[dict[str, Tensor]], dict[str, np.ndarray]] | None = None,
) -> GradReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` maps a dict of named tensors to a scalar tensor.  Relative error
    per coordinate is ``|a - n| / max(|a|, |n|, floor)``.  With
    ``max_coords`` set, that many coordinates per parameter are drawn at
    random (seeded) instead of checking all of them.  ``analytic`` overrides
    how the reverse-mode gradient is obtained (used for negative controls).
    """
    base = {k: np.array(v.data if isinstance(v, Tensor) else v, dtype=np.float64) for k, v in params.items()}
    rng = np.random.default_rng(seed)

    with default_dtype(np.float64):
        leaves = {k: parameter(v, name=k) for k, v in base.items()}
        if analytic is None:
            grads = backward(f(leaves), leaves)
        else:
            grads = analytic(leaves)

        abs_err: dict[str, float] = {}
        rel_err: dict[str, float] = {}
        checked: dict[str, int] = {}
        with no_grad():
            for name, arr in base.items():
                flat_idx = np.arange(arr.size)
                if max_coords is not None and arr.size > max_coords:
                    flat_idx = rng.choice(arr.size, size=max_coords, replace=False)
                worst_abs = worst_rel = 0.0
                for fi in flat_idx:
                    idx = np.unravel_index(fi, arr.shape)
                    values = []
                    for step in (h, -h):
                        trial = dict(base)
                        pert = arr.copy()
                        pert[idx] += step
                        trial[name] = pert
                        values.append(float(f({k: Tensor(v) for k, v in trial.items()}).data))
                    num = (values[0] - values[1]) / (2.0 * h)
                    ana = float(grads[name][idx])
                    err = abs(ana - num)
                    worst_abs = max(worst_abs, err)
                    worst_rel = max(worst_rel, err / max(abs(ana), abs(num), floor))
                abs_err[name] = worst_abs
                rel_err[name] = worst_rel
                checked[name] = len(flat_idx)
    return GradReport(abs_err, rel_err, h, tol, checked)

