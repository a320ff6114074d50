"""Frequency Dynamic Augmentation.

A learnable per-lead, per-bin weight ``W`` gives the importance map
``A = sigmoid(W)``. Bins at or above the per-lead median of ``A`` keep
their content scaled by ``A``; the rest additionally receive Gaussian
noise with inverse-importance strength ``lambda``, normalised to mean 1
over the perturbed bins of each lead::

    X_aug = rfft(x) * (A + lambda * Z)

The modulation is real, so each bin keeps its phase up to a sign flip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .autodiff import Tensor, irfft, mul, record, reshape, rfft, sigmoid

EPSILON = 1e-6
QUANTILE = 0.5


@dataclass
class FrequencyImportance:
    """Learnable ``C x K`` frequency weights."""

    W: Tensor
    epsilon: float = EPSILON
    quantile_q: float = QUANTILE

    @classmethod
    def zeros(cls, n_leads: int, length: int, dtype=np.float64, **kw) -> "FrequencyImportance":
        return cls(Tensor(np.zeros((n_leads, length // 2 + 1), dtype=dtype), requires_grad=True, name="fda.W"), **kw)

    @property
    def n_bins(self) -> int:
        return self.W.shape[-1]

    def signal_length_ok(self, T: int) -> bool:
        return T // 2 + 1 == self.n_bins


@dataclass
class NoiseScale:
    lam: np.ndarray
    threshold: np.ndarray

    @property
    def perturbed(self) -> np.ndarray:
        return self.lam != 0


def importance_map(fi: FrequencyImportance) -> Tensor:
    return sigmoid(fi.W)


def per_lead_threshold(A, q: float = QUANTILE) -> np.ndarray:
    """Nearest-rank-lower quantile of each row: sorted index ``ceil(q K) - 1``."""
    A = np.atleast_2d(np.asarray(A.data if isinstance(A, Tensor) else A, dtype=np.float64))
    K = A.shape[-1]
    pos = max(math.ceil(q * K) - 1, 0)
    return np.partition(A, pos, axis=-1)[..., pos]


def noise_scale(A, theta=None, epsilon: float = EPSILON, q: float = QUANTILE) -> NoiseScale:
    """Gate bins with ``A >= theta`` to zero, scale the rest by ``1/(eps + A)``, normalise per lead."""
    A = np.atleast_2d(np.asarray(A.data if isinstance(A, Tensor) else A, dtype=np.float64))
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if theta is None and q == QUANTILE:
        lam, th = _kernels.fda_noise_scale(np.ascontiguousarray(A), float(epsilon))
        return NoiseScale(lam, th)
    th = per_lead_threshold(A, q) if theta is None else np.asarray(theta, dtype=np.float64).reshape(-1)
    return NoiseScale(_scale_from_gate(A, A < th[:, None], epsilon), th)


def _scale_from_gate(A: np.ndarray, open_: np.ndarray, epsilon: float) -> np.ndarray:
    lam = np.where(open_, 1.0 / (epsilon + A), 0.0)
    count = open_.sum(axis=-1, keepdims=True)
    mu = np.divide(lam.sum(axis=-1, keepdims=True), count, out=np.ones(count.shape), where=count > 0)
    return lam / mu


def draw_noise(seed, shape) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def modulation(A: Tensor, Z: np.ndarray, epsilon: float = EPSILON, open_: np.ndarray | None = None,
               q: float = QUANTILE) -> tuple[Tensor, NoiseScale]:
    """``A + lambda * Z`` for noise ``Z`` of shape ``[..., C, K]``.

    Differentiable in ``A`` through both terms; which bins are perturbed
    (``open_``) is held constant in the backward pass. Pass ``open_`` to
    pin the gate explicitly.
    """
    Ad = np.asarray(A.data, dtype=np.float64)
    if open_ is None:
        ns = noise_scale(Ad, epsilon=epsilon, q=q)
        open_ = ns.perturbed
    else:
        ns = NoiseScale(_scale_from_gate(Ad, open_, epsilon), np.full(Ad.shape[0], np.nan))
    lam = ns.lam
    r = np.where(open_, 1.0 / (epsilon + Ad), 0.0)
    n = open_.sum(axis=-1, keepdims=True)
    mu = np.divide(r.sum(axis=-1, keepdims=True), n, out=np.ones(n.shape), where=n > 0)
    out = (Ad + lam * Z).astype(A.dtype)
    batch_axes = tuple(range(Z.ndim - 2))

    def bwd(g):
        g = np.asarray(g, dtype=np.float64)
        gA = g.sum(axis=batch_axes) if batch_axes else g.copy()
        g_lam = (g * Z).sum(axis=batch_axes) if batch_axes else g * Z
        dr = -r * r
        cross = np.divide((g_lam * r).sum(axis=-1, keepdims=True), n * mu * mu,
                          out=np.zeros(n.shape), where=n > 0)
        gA += np.where(open_, g_lam * dr / mu - dr * cross, 0.0)
        return (gA.astype(A.dtype),)

    return record("fda_modulation", (A,), out, bwd), ns


def augment_signal(x, fi: FrequencyImportance, seed=0, noise: np.ndarray | None = None,
                   open_: np.ndarray | None = None) -> tuple[Tensor, NoiseScale]:
    """Augment ``x`` of shape ``[C, T]`` or ``[B, C, T]``; returns the signal and the noise scale used.

    ``seed`` may be a single seed or one per batch item. ``noise`` overrides
    the sampled Z.
    """
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=fi.W.dtype))
    if xt.ndim not in (2, 3):
        raise ValueError(f"augment expects [C, T] or [B, C, T], got {xt.shape}")
    C, T = xt.shape[-2:]
    if C != fi.W.shape[0] or not fi.signal_length_ok(T):
        raise ValueError(f"signal {C}x{T} does not match importance weights {fi.W.shape} (need K = T//2 + 1)")
    K = fi.n_bins
    if noise is None:
        if xt.ndim == 2:
            noise = draw_noise(seed, (C, K))
        else:
            seeds = seed if isinstance(seed, (list, tuple, np.ndarray)) else [seed] * xt.shape[0]
            noise = np.stack([draw_noise(s, (C, K)) for s in seeds])
    A = importance_map(fi)
    m, ns = modulation(A, noise, fi.epsilon, open_=open_, q=fi.quantile_q)
    spec = rfft(xt)
    m4 = reshape(m, m.shape + (1,))
    out = irfft(mul(spec, m4), n=T)
    return out, ns


def augment(x, fi: FrequencyImportance, seed=0, patch_len: int = 75, **kw) -> Tensor:
    """Augmented view as patches ``[..., C, N, P]``."""
    sig, _ = augment_signal(x, fi, seed, **kw)
    T = sig.shape[-1]
    if T % patch_len:
        raise ValueError(f"length {T} not divisible by patch length {patch_len}")
    return reshape(sig, sig.shape[:-1] + (T // patch_len, patch_len))
