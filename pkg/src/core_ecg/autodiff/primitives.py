"""Differentiable primitives.

Every primitive takes :class:`Tensor` inputs (raw arrays are wrapped as
constants in the dtype of the first tensor input), returns a new
:class:`Tensor`, and, when any input carries gradients, records a
:class:`Node` whose backward closure maps the upstream gradient to one
gradient per input.

Complex spectra are stored as interleaved ``(real, imag)`` pairs in a
trailing axis of length 2.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .tensor import DTypeError, Node, ShapeError, Tensor, grad_enabled

PRIMITIVES: dict[str, Callable[..., Tensor]] = {}


def primitive(kind: str):
    def register(fn):
        PRIMITIVES[kind] = fn
        fn.kind = kind
        return fn

    return register


def apply_primitive(kind: str, inputs: Sequence, attrs: dict | None = None) -> Tensor:
    """Dispatch ``kind`` on ``inputs`` with keyword ``attrs``."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}; known: {sorted(PRIMITIVES)}") from None
    return fn(*inputs, **(attrs or {}))


def record(kind: str, inputs: Sequence[Tensor], out: np.ndarray, backward) -> Tensor:
    """Wrap ``out`` as a graph node over ``inputs``.

    Public so that modules with fused differentiable steps can register
    their own nodes without extending the primitive table.
    """
    res = Tensor(out)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        res.requires_grad = True
        res.node = Node(kind, tuple(inputs), backward)
    return res


def _coerce(kind: str, *xs) -> list[Tensor]:
    dtype = next((x.dtype for x in xs if isinstance(x, Tensor)), None)
    out = []
    for x in xs:
        if isinstance(x, Tensor):
            if dtype is not None and x.dtype != dtype:
                raise DTypeError(f"{kind}: mixed input dtypes {dtype} and {x.dtype}")
            out.append(x)
        else:
            out.append(Tensor(np.asarray(x, dtype=dtype or np.float64)))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(kind: str, a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a} and {b}") from None


# ---------------------------------------------------------------- elementwise


@primitive("add")
def add(a, b) -> Tensor:
    a, b = _coerce("add", a, b)
    _broadcast_shape("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return record("add", (a, b), a.data + b.data, bwd)


@primitive("mul")
def mul(a, b) -> Tensor:
    a, b = _coerce("mul", a, b)
    _broadcast_shape("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return record("mul", (a, b), ad * bd, bwd)


@primitive("scale")
def scale(x, factor: float) -> Tensor:
    (x,) = _coerce("scale", x)
    f = x.dtype.type(factor)

    def bwd(g):
        return (g * f,)

    return record("scale", (x,), x.data * f, bwd)


@primitive("sigmoid")
def sigmoid(x, log: bool = False) -> Tensor:
    """Logistic sigmoid; ``log=True`` gives the stable log-sigmoid."""
    (x,) = _coerce("sigmoid", x)
    xd = x.data
    # exp(-|x|) never overflows
    e = np.exp(-np.abs(xd))
    s = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)
    if log:
        out = (np.minimum(xd, 0) - np.log1p(e)).astype(xd.dtype)

        def bwd(g):
            return (g * (1 - s),)

        return record("sigmoid", (x,), out, bwd)

    def bwd(g):
        return (g * s * (1 - s),)

    return record("sigmoid", (x,), s, bwd)


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@primitive("gelu")
def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    (x,) = _coerce("gelu", x)
    xd = x.data
    cdf = (0.5 * (1.0 + erf(xd / _SQRT2))).astype(xd.dtype)

    def bwd(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        return (g * (cdf + xd * pdf),)

    return record("gelu", (x,), xd * cdf, bwd)


# ------------------------------------------------------------------ reductions


@primitive("softmax")
def softmax(x, axis: int = -1, log: bool = False) -> Tensor:
    (x,) = _coerce("softmax", x)
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    denom = ex.sum(axis=axis, keepdims=True)
    y = ex / denom
    if log:
        out = shifted - np.log(denom)

        def bwd(g):
            return (g - y * g.sum(axis=axis, keepdims=True),)

        return record("softmax", (x,), out, bwd)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", (x,), y, bwd)


@primitive("mean_pool")
def mean_pool(x, axis=None, keepdims: bool = False) -> Tensor:
    """Arithmetic mean over ``axis`` (all axes when None)."""
    (x,) = _coerce("mean_pool", x)
    shape = x.shape
    out = x.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = x.data.size
        axes = tuple(range(x.ndim))
    else:
        axes = tuple(a % x.ndim for a in np.atleast_1d(axis))
        count = int(np.prod([shape[a] for a in axes]))
    inv = x.dtype.type(1.0 / count)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * inv, shape).copy(),)

    return record("mean_pool", (x,), np.asarray(out, dtype=x.dtype), bwd)


@primitive("layer_norm")
def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine ``gamma``/``beta``."""
    x, gamma, beta = _coerce("layer_norm", x, gamma, beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({d},), got {gamma.shape}, {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data

    def bwd(g):
        gx = ggam = gbet = None
        if x.requires_grad:
            gh = g * gd
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gamma.requires_grad:
            ggam = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            gbet = g.reshape(-1, d).sum(axis=0)
        return gx, ggam, gbet

    return record("layer_norm", (x, gamma, beta), xhat * gd + beta.data, bwd)


# ---------------------------------------------------------------- linear maps


@primitive("matmul")
def matmul(a, b, transpose_b: bool = False) -> Tensor:
    """Batched matrix product ``a @ b`` (or ``a @ b^T``) with broadcasting."""
    a, b = _coerce("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: inputs must be at least 2-D, got {a.shape} and {b.shape}")
    inner_b = b.shape[-1] if transpose_b else b.shape[-2]
    if a.shape[-1] != inner_b:
        raise ShapeError(
            f"matmul: inner dims differ ({a.shape[-1]} vs {inner_b}) for shapes {a.shape} @ {b.shape}"
            + (" with transpose_b" if transpose_b else "")
        )
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data
    bm = np.swapaxes(bd, -1, -2) if transpose_b else bd

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bm, -1, -2), ad.shape)
        if b.requires_grad:
            if transpose_b:
                gb = _unbroadcast(np.swapaxes(g, -1, -2) @ ad, bd.shape)
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return record("matmul", (a, b), ad @ bm, bwd)


@primitive("conv1d")
def conv1d(x, w, stride: int = 1) -> Tensor:
    """Channels-last 1-D convolution without padding.

    ``x`` is ``[..., T, C_in]``, ``w`` is ``[K, C_in, C_out]``; output is
    ``[..., (T - K) // stride + 1, C_out]``.
    """
    x, w = _coerce("conv1d", x, w)
    if w.ndim != 3 or x.ndim < 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"conv1d: expected x [..., T, {w.shape[1] if w.ndim == 3 else 'C_in'}] and w [K, C_in, C_out], got {x.shape}, {w.shape}")
    K, cin, cout = w.shape
    T = x.shape[-2]
    if T < K:
        raise ShapeError(f"conv1d: input length {T} shorter than kernel {K}")
    t_out = (T - K) // stride + 1
    lead = x.shape[:-2]
    xd, wd = x.data, w.data

    if stride == K and T == t_out * K:
        xf = xd.reshape(*lead, t_out, K * cin)
        wf = wd.reshape(K * cin, cout)

        def bwd(g):
            gx = (g @ wf.T).reshape(xd.shape) if x.requires_grad else None
            gw = None
            if w.requires_grad:
                gw = (xf.reshape(-1, K * cin).T @ g.reshape(-1, cout)).reshape(wd.shape)
            return gx, gw

        return record("conv1d", (x, w), xf @ wf, bwd)

    span = stride * (t_out - 1) + 1

    def window(k):
        return xd[..., k : k + span : stride, :]

    out = sum(window(k) @ wd[k] for k in range(K))

    def bwd(g):
        gx = gw = None
        if x.requires_grad:
            gx = np.zeros_like(xd)
            for k in range(K):
                gx[..., k : k + span : stride, :] += g @ wd[k].T
        if w.requires_grad:
            g2 = g.reshape(-1, cout)
            gw = np.stack([window(k).reshape(-1, cin).T @ g2 for k in range(K)])
        return gx, gw

    return record("conv1d", (x, w), np.asarray(out, dtype=xd.dtype), bwd)


@primitive("cosine_similarity")
def cosine_similarity(a, b) -> Tensor:
    """Pairwise cosine similarity of rows: ``[..., n, D] x [..., m, D] -> [..., n, m]``."""
    a, b = _coerce("cosine_similarity", a, b)
    if a.shape[-1] != b.shape[-1] or a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"cosine_similarity: row widths differ, got {a.shape} and {b.shape}")
    na = np.linalg.norm(a.data, axis=-1, keepdims=True)
    nb = np.linalg.norm(b.data, axis=-1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine_similarity: zero-norm embedding")
    ah, bh = a.data / na, b.data / nb
    s = ah @ np.swapaxes(bh, -1, -2)

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            ga = (g @ bh - (g * s).sum(axis=-1, keepdims=True) * ah) / na
        if b.requires_grad:
            gt = np.swapaxes(g, -1, -2)
            st = np.swapaxes(s, -1, -2)
            gb = (gt @ ah - (gt * st).sum(axis=-1, keepdims=True) * bh) / nb
        return ga, gb

    return record("cosine_similarity", (a, b), s, bwd)


# ------------------------------------------------------------------ structure


@primitive("reshape")
def reshape(x, shape) -> Tensor:
    (x,) = _coerce("reshape", x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {src} into {tuple(shape)}") from None

    def bwd(g):
        return (g.reshape(src),)

    return record("reshape", (x,), out, bwd)


@primitive("concat")
def concat(*xs, axis: int = 0) -> Tensor:
    xs = _coerce("concat", *xs)
    ref = xs[0].shape
    ax = axis % len(ref)
    for t in xs[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in xs])[:-1]

    def bwd(g):
        return tuple(np.split(g, sizes, axis=ax))

    return record("concat", xs, np.concatenate([t.data for t in xs], axis=ax), bwd)


@primitive("index_select")
def index_select(x, indices, axis: int = 0) -> Tensor:
    (x,) = _coerce("index_select", x)
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % x.ndim
    n = x.shape[ax]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise ShapeError(f"index_select: index out of range for axis {axis} of size {n}")
    shape = x.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(np.moveaxis(gx, ax, 0), idx, np.moveaxis(g, ax, 0))
        return (gx,)

    return record("index_select", (x,), np.take(x.data, idx, axis=ax), bwd)


@primitive("scatter")
def scatter(x, indices, size: int, axis: int = 0) -> Tensor:
    """Place slices of ``x`` at ``indices`` of a zero tensor with ``size`` along ``axis``.

    Repeated indices accumulate. Inverse (adjoint) of ``index_select``.
    """
    (x,) = _coerce("scatter", x)
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % x.ndim
    if idx.shape != (x.shape[ax],):
        raise ShapeError(f"scatter: need one index per slice along axis {axis}, got {idx.shape} for {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise ShapeError(f"scatter: index out of range for target size {size}")
    out_shape = list(x.shape)
    out_shape[ax] = size
    out = np.zeros(out_shape, dtype=x.dtype)
    np.add.at(np.moveaxis(out, ax, 0), idx, np.moveaxis(x.data, ax, 0))

    def bwd(g):
        return (np.take(g, idx, axis=ax),)

    return record("scatter", (x,), out, bwd)


# ----------------------------------------------------------------------- FFT


@primitive("rfft")
def rfft(x) -> Tensor:
    """Real FFT over the last axis: ``[..., T] -> [..., T // 2 + 1, 2]``."""
    (x,) = _coerce("rfft", x)
    T = x.shape[-1]
    spec = np.fft.rfft(x.data, axis=-1)
    out = np.stack([spec.real, spec.imag], axis=-1).astype(x.dtype)
    K = spec.shape[-1]
    # adjoint: dx = T * irfft(G with interior bins halved)
    half = np.full(K, 0.5)
    half[0] = 1.0
    if T % 2 == 0:
        half[-1] = 1.0

    def bwd(g):
        G = (g[..., 0] + 1j * g[..., 1]) * half
        return ((T * np.fft.irfft(G, n=T, axis=-1)).astype(g.dtype),)

    return record("rfft", (x,), out, bwd)


@primitive("irfft")
def irfft(y, n: int | None = None) -> Tensor:
    """Inverse of :func:`rfft`: ``[..., K, 2] -> [..., n]`` with ``K = n // 2 + 1``."""
    (y,) = _coerce("irfft", y)
    if y.ndim < 2 or y.shape[-1] != 2:
        raise ShapeError(f"irfft: expected interleaved spectrum [..., K, 2], got {y.shape}")
    K = y.shape[-2]
    if n is None:
        n = 2 * (K - 1)
    if n // 2 + 1 != K:
        raise ShapeError(f"irfft: K={K} bins incompatible with output length {n}")
    spec = y.data[..., 0] + 1j * y.data[..., 1]
    out = np.fft.irfft(spec, n=n, axis=-1).astype(y.dtype)
    weight = np.full(K, 2.0 / n)
    weight[0] = 1.0 / n
    if n % 2 == 0:
        weight[-1] = 1.0 / n

    def bwd(g):
        G = np.fft.rfft(g, axis=-1) * weight
        gy = np.stack([G.real, G.imag], axis=-1)
        # imaginary parts of DC (and Nyquist) bins do not reach the output
        gy[..., 0, 1] = 0.0
        if n % 2 == 0:
            gy[..., -1, 1] = 0.0
        return (gy.astype(g.dtype),)

    return record("irfft", (y,), out, bwd)
