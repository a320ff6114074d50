import os
import subprocess
import sys
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core_ecg import _kernels
from core_ecg._kernels import _fallback
from core_ecg.stdm import (
    DROPPED,
    MASKED,
    VISIBLE,
    MaskPlan,
    apply_mask,
    sample_mask,
    sample_mask_codes,
    uniform_random_mask,
)


def _check_plan(plan: MaskPlan, k: int):
    V, M, D = plan.V, plan.M, plan.D
    np.testing.assert_array_equal(V + M + D, 1)
    assert not (V & M).any() and not (V & D).any() and not (M & D).any()
    for n in range(V.shape[1]):
        full = M[:, n].all()
        if full:
            assert V[:, n].sum() == 0 and D[:, n].sum() == 0
        else:
            assert V[:, n].sum() == k


class TestSampleMask:
    def test_full_temporal(self):
        plan = sample_mask(12, 30, p_time=1.0, seed=0)
        assert plan.V.sum() == 0 and plan.D.sum() == 0 and plan.M.all()

    def test_all_visible(self):
        plan = sample_mask(12, 30, p_time=0.0, k=12, seed=0)
        assert plan.V.all() and plan.M.sum() == 0 and plan.D.sum() == 0

    def test_no_drop(self):
        plan = sample_mask(12, 30, p_time=0.0, p_lead=0.0, k=4, seed=1)
        assert plan.D.sum() == 0 and (plan.V.sum(axis=0) == 4).all()

    def test_all_drop(self):
        plan = sample_mask(12, 30, p_time=0.0, p_lead=1.0, k=4, seed=1)
        assert plan.M.sum() == 0 and plan.D.sum() == 8 * 30

    @pytest.mark.parametrize("kw", [dict(p_time=-0.1), dict(p_time=1.1), dict(p_lead=2.0), dict(k=0), dict(k=13)])
    def test_param_errors(self, kw):
        args = dict(p_time=0.5, p_lead=0.2, k=4)
        args.update(kw)
        with pytest.raises(ValueError):
            sample_mask(12, 30, seed=0, **args)

    def test_deterministic(self):
        a = sample_mask(12, 30, seed=42)
        b = sample_mask(12, 30, seed=42)
        assert a.codes.tobytes() == b.codes.tobytes()

    def test_partition_on_many_plans(self):
        codes = sample_mask_codes(10_000, 12, 30, 0.5, 0.2, 4, seed=5)
        assert set(np.unique(codes)) <= {VISIBLE, MASKED, DROPPED}
        vis = (codes == VISIBLE).sum(axis=1)
        full = (codes == MASKED).all(axis=1)
        assert np.all(vis[~full] == 4) and np.all(vis[full] == 0)
        assert not np.any((codes == DROPPED).any(axis=1) & full)

    @settings(max_examples=50, deadline=None)
    @given(C=st.integers(1, 12), N=st.integers(1, 12), p_time=st.floats(0, 1), p_lead=st.floats(0, 1),
           data=st.data(), seed=st.integers(0, 2**32 - 1))
    def test_structure_property(self, C, N, p_time, p_lead, data, seed):
        k = data.draw(st.integers(1, C))
        _check_plan(sample_mask(C, N, p_time, p_lead, k, seed=seed), k)

    def test_mode_frequency(self):
        codes = sample_mask_codes(10_000, 12, 10, 0.5, 0.2, 4, seed=8)
        full = (codes == MASKED).all(axis=1).mean()
        sigma = np.sqrt(0.25 / 1e5)
        assert abs(full - 0.5) <= 3 * sigma

    def test_subset_uniform(self):
        # every 2-subset of 4 leads should appear equally often
        codes = sample_mask_codes(30_000, 4, 1, 0.0, 0.0, 2, seed=3)
        keys = [tuple(np.flatnonzero(c[:, 0] == VISIBLE)) for c in codes]
        counts = np.array([keys.count(s) for s in sorted(set(keys))])
        assert len(counts) == comb(4, 2)
        expected = 30_000 / 6
        chi2 = ((counts - expected) ** 2 / expected).sum()
        assert chi2 < 20.5  # chi-square 5 dof, p = 0.001

    def test_visible_index_lead_major(self):
        plan = MaskPlan.from_codes(np.array([[1, 0, 1], [0, 2, 1]]))
        np.testing.assert_array_equal(plan.visible_index(), [1, 3])
        assert plan.visible_pairs() == [(0, 1), (1, 0)]


class TestUniformMask:
    def test_extremes(self):
        assert uniform_random_mask(12, 30, 0.0, seed=0).V.all()
        assert uniform_random_mask(12, 30, 1.0, seed=0).M.all()

    def test_rate(self):
        m = np.mean([uniform_random_mask(10, 10, 0.5, seed=s).M.mean() for s in range(1000)])
        assert abs(m - 0.5) <= 0.005

    def test_no_drop(self):
        assert uniform_random_mask(12, 30, 0.75, seed=3).D.sum() == 0

    def test_ratio_error(self):
        with pytest.raises(ValueError):
            uniform_random_mask(2, 2, 1.5)


class TestApplyMask:
    def test_all_visible(self, rng):
        x = rng.standard_normal((12, 30, 75))
        out = apply_mask(x, sample_mask(12, 30, p_time=0.0, k=12, seed=0))
        np.testing.assert_array_equal(out["x_v"], x)
        assert not out["x_m"].any() and not out["x_d"].any()

    def test_all_masked(self, rng):
        x = rng.standard_normal((3, 4, 5))
        np.testing.assert_array_equal(apply_mask(x, sample_mask(3, 4, p_time=1.0, k=2, seed=0))["x_m"], x)

    def test_partition_sum(self, rng):
        x = rng.standard_normal((12, 30, 75))
        out = apply_mask(x, sample_mask(12, 30, seed=9))
        np.testing.assert_array_equal(out["x_v"] + out["x_m"] + out["x_d"], x)

    def test_dim_mismatch(self, rng):
        with pytest.raises(ValueError):
            apply_mask(rng.standard_normal((3, 4, 5)), sample_mask(3, 5, seed=0))


class TestBackends:
    def test_backend_reported(self):
        assert _kernels.BACKEND in ("cython", "python")

    @pytest.mark.skipif(_kernels.BACKEND != "cython", reason="extension not built")
    @settings(max_examples=40, deadline=None)
    @given(S=st.integers(1, 20), C=st.integers(1, 12), N=st.integers(1, 12), p_time=st.floats(0, 1),
           p_lead=st.floats(0, 1), data=st.data(), seed=st.integers(0, 2**32 - 1))
    def test_masks_agree(self, S, C, N, p_time, p_lead, data, seed):
        from core_ecg._kernels import _ckernels

        k = data.draw(st.integers(1, C))
        r = np.random.default_rng(seed)
        u = (r.random((S, N)), r.random((S, N, k)), r.random((S, N, C)))
        a = _ckernels.stdm_codes(*u, p_time, p_lead, k, C)
        b = _fallback.stdm_codes(*u, p_time, p_lead, k, C)
        assert a.dtype == b.dtype == np.int8
        np.testing.assert_array_equal(a, b)

    @pytest.mark.skipif(_kernels.BACKEND != "cython", reason="extension not built")
    @settings(max_examples=40, deadline=None)
    @given(C=st.integers(1, 6), K=st.integers(1, 50), seed=st.integers(0, 2**32 - 1), ties=st.booleans())
    def test_noise_scale_agrees(self, C, K, seed, ties):
        from core_ecg._kernels import _ckernels

        r = np.random.default_rng(seed)
        A = r.random((C, K))
        if ties:
            A = np.round(A, 1)
        lc, tc = _ckernels.fda_noise_scale(A, 1e-6)
        lp, tp = _fallback.fda_noise_scale(A, 1e-6)
        np.testing.assert_array_equal(tc, tp)
        np.testing.assert_allclose(lc, lp, rtol=1e-12, atol=1e-12)

    def test_env_forces_fallback(self):
        code = "import core_ecg._kernels as k; print(k.BACKEND)"
        env = dict(os.environ, CORE_ECG_PURE_PYTHON="1")
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "python"
