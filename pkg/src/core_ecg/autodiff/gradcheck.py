"""Finite-difference verification of primitive gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import primitives as P
from .tensor import Tensor, backward

FD_STEP = 1e-5
# Gradients smaller than this are compared absolutely.
REL_FLOOR = 1e-3


@dataclass
class GradCheckReport:
    kind: str
    max_rel_err: float
    pass_: bool

    @property
    def passed(self) -> bool:
        return self.pass_

    def as_dict(self) -> dict:
        return {"kind": self.kind, "max_rel_err": self.max_rel_err, "pass": self.pass_}


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_grad(f: Callable[[], float], arr: np.ndarray, step: float = FD_STEP,
                 entries: Sequence[int] | None = None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``arr`` (perturbed in place).

    With ``entries`` only those flat positions are probed; the rest are NaN.
    """
    flat = arr.reshape(-1)
    out = np.full(flat.shape, np.nan) if entries is not None else np.empty(flat.shape)
    for i in range(flat.size) if entries is None else entries:
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * step)
    return out.reshape(arr.shape)


def _case(kind: str, shapes: list[tuple[int, ...]], rng: np.random.Generator):
    """Inputs and attrs giving a smooth, well-conditioned sample point for ``kind``."""

    def rnd(shape):
        return rng.standard_normal(shape)

    attrs: dict = {}
    if kind == "matmul":
        arrays = [rnd(s) for s in shapes]
    elif kind in ("add", "mul", "sigmoid", "gelu", "softmax", "mean_pool", "scale", "rfft"):
        arrays = [rnd(s) for s in shapes]
        if kind == "scale":
            attrs = {"factor": -1.7}
        if kind == "softmax":
            attrs = {"axis": -1}
        if kind == "mean_pool":
            attrs = {"axis": -1}
    elif kind == "layer_norm":
        (s,) = shapes[:1]
        arrays = [rnd(s), 1.0 + 0.1 * rnd(s[-1:]), 0.1 * rnd(s[-1:])]
    elif kind == "conv1d":
        x_shape, w_shape = shapes
        arrays = [rnd(x_shape), rnd(w_shape)]
        attrs = {"stride": 2}
    elif kind == "concat":
        arrays = [rnd(s) for s in shapes]
        attrs = {"axis": 0}
    elif kind == "index_select":
        (s,) = shapes
        arrays = [rnd(s)]
        attrs = {"indices": rng.integers(0, s[0], size=s[0] + 2), "axis": 0}
    elif kind == "scatter":
        (s,) = shapes
        arrays = [rnd(s)]
        attrs = {"indices": rng.permutation(s[0] + 3)[: s[0]], "size": s[0] + 3, "axis": 0}
    elif kind == "irfft":
        (s,) = shapes
        arrays = [rnd(s)]
        attrs = {"n": 2 * (s[-2] - 1)}
    elif kind == "cosine_similarity":
        arrays = [rnd(s) for s in shapes]
    elif kind == "reshape":
        (s,) = shapes
        arrays = [rnd(s)]
        attrs = {"shape": (-1,)}
    else:
        raise ValueError(f"no grad-check case for {kind!r}")
    return arrays, attrs


DEFAULT_SHAPES: dict[str, list[tuple[int, ...]]] = {
    "matmul": [(4, 3), (3, 2)],
    "add": [(3, 4), (4,)],
    "mul": [(3, 4), (3, 1)],
    "scale": [(5,)],
    "conv1d": [(2, 11, 3), (3, 3, 4)],
    "layer_norm": [(6, 16)],
    "softmax": [(3, 7)],
    "gelu": [(32,)],
    "sigmoid": [(10,)],
    "mean_pool": [(3, 5)],
    "concat": [(2, 3), (4, 3)],
    "index_select": [(5, 3)],
    "scatter": [(4, 3)],
    "rfft": [(2, 9)],
    "irfft": [(2, 5, 2)],
    "cosine_similarity": [(3, 6), (4, 6)],
    "reshape": [(3, 4)],
}


def grad_check(kind: str, shapes: Sequence[Sequence[int]] | None = None, tol: float = 1e-4,
               seed: int = 0) -> GradCheckReport:
    """Compare analytic and central-difference gradients of one primitive at float64.

    The scalar probed is ``sum(out * R)`` for a fixed random ``R`` so every
    output entry contributes with a distinct weight.
    """
    rng = np.random.default_rng(seed)
    shapes = [tuple(s) for s in (shapes or DEFAULT_SHAPES[kind])]
    arrays, attrs = _case(kind, shapes, rng)
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    fn = P.PRIMITIVES[kind]

    def value() -> float:
        out = fn(*[Tensor(a) for a in arrays], **attrs).data
        return float(np.sum(out * weight))

    probe = fn(*[Tensor(a) for a in arrays], **attrs).data
    weight = rng.standard_normal(probe.shape)

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves, **attrs)
    loss = P.mean_pool(P.mul(out, Tensor(weight)))
    loss = P.scale(loss, float(weight.size))
    backward(loss)

    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        num = numeric_grad(value, arr)
        ana = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        worst = max(worst, rel_error(ana, num))
    return GradCheckReport(kind, worst, worst <= tol)
