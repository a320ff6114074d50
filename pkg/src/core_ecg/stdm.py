"""Spatio-Temporal Dual Masking.

For each time column, with probability ``p_time`` every lead is masked
(full temporal mask). Otherwise a uniform random subset of ``k`` leads
stays visible and each remaining lead is dropped with probability
``p_lead`` (excluded from the loss) or masked (reconstruction target).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

VISIBLE, MASKED, DROPPED = 0, 1, 2


@dataclass
class MaskPlan:
    """Disjoint visible/masked/dropped ``C x N`` indicator matrices."""

    V: np.ndarray
    M: np.ndarray
    D: np.ndarray
    params: dict = field(default_factory=dict)
    seed: int | None = None

    @classmethod
    def from_codes(cls, codes: np.ndarray, params=None, seed=None) -> "MaskPlan":
        codes = np.asarray(codes)
        return cls((codes == VISIBLE).astype(np.int8), (codes == MASKED).astype(np.int8),
                   (codes == DROPPED).astype(np.int8), dict(params or {}), seed)

    @property
    def shape(self) -> tuple[int, int]:
        return self.V.shape

    @property
    def codes(self) -> np.ndarray:
        return (self.M * MASKED + self.D * DROPPED).astype(np.int8)

    def visible_index(self) -> np.ndarray:
        """Flat ``lead * N + patch`` positions of visible cells, lead-major."""
        return np.flatnonzero(self.V)

    def visible_pairs(self) -> list[tuple[int, int]]:
        N = self.V.shape[1]
        return [(int(i // N), int(i % N)) for i in self.visible_index()]


def _check_params(C, N, p_time, p_lead, k):
    if C < 1 or N < 1:
        raise ValueError(f"grid must be at least 1x1, got {C}x{N}")
    if not 0.0 <= p_time <= 1.0:
        raise ValueError(f"p_time must lie in [0, 1], got {p_time}")
    if not 0.0 <= p_lead <= 1.0:
        raise ValueError(f"p_lead must lie in [0, 1], got {p_lead}")
    if not 1 <= k <= C:
        raise ValueError(f"k must lie in [1, {C}], got {k}")


def sample_mask_codes(count: int, C: int, N: int, p_time: float, p_lead: float, k: int,
                      seed) -> np.ndarray:
    """``count`` independent plans as int8 codes ``[count, C, N]``."""
    _check_params(C, N, p_time, p_lead, k)
    rng = np.random.default_rng(seed)
    u_time = rng.random((count, N))
    u_perm = rng.random((count, N, k))
    u_drop = rng.random((count, N, C))
    return _kernels.stdm_codes(u_time, u_perm, u_drop, float(p_time), float(p_lead), int(k), int(C))


def sample_mask(C: int, N: int, p_time: float = 0.5, p_lead: float = 0.2, k: int = 4, seed=0) -> MaskPlan:
    codes = sample_mask_codes(1, C, N, p_time, p_lead, k, seed)[0]
    return MaskPlan.from_codes(codes, {"p_time": p_time, "p_lead": p_lead, "k": k}, seed)


def uniform_random_mask(C: int, N: int, mask_ratio: float = 0.75, seed=0) -> MaskPlan:
    """Baseline: each cell masked independently with ``mask_ratio``; nothing dropped."""
    if not 0.0 <= mask_ratio <= 1.0:
        raise ValueError(f"mask_ratio must lie in [0, 1], got {mask_ratio}")
    masked = np.random.default_rng(seed).random((C, N)) < mask_ratio
    return MaskPlan.from_codes(masked.astype(np.int8), {"mask_ratio": mask_ratio}, seed)


def apply_mask(x: np.ndarray, plan: MaskPlan) -> dict:
    """Zero out non-selected patches of ``x`` (``C x N x P``) for each of V, M, D."""
    x = np.asarray(x)
    if x.shape[:2] != plan.shape:
        raise ValueError(f"patch grid {x.shape[:2]} does not match plan {plan.shape}")
    return {
        "x_v": x * plan.V[..., None],
        "x_m": x * plan.M[..., None],
        "x_d": x * plan.D[..., None],
        "visible_index": plan.visible_pairs(),
    }
