import numpy as np
import pytest
from conftest import tiny_model_config
from hypothesis import given, settings
from hypothesis import strategies as st

from core_ecg.autodiff import Tensor, backward, layer_norm
from core_ecg.model import CoReECG, EmptyVisibleSetError, ModelConfig, init_params, is_teacher
from core_ecg.objectives import reconstruction_loss
from core_ecg.stdm import MaskPlan, sample_mask


def _model(seed=0, dtype=np.float64, **kw):
    return CoReECG(tiny_model_config(**kw), seed=seed, dtype=dtype)


def _plan_with_visible(C, N, visible):
    codes = np.ones((C, N), dtype=np.int8)
    for c, n in visible:
        codes[c, n] = 0
    return MaskPlan.from_codes(codes)


def _zero_residual_branches(model, prefix):
    for name, t in model.params.items():
        if name.startswith(prefix) and (".attn.wo" in name or ".attn.bo" in name or ".mlp.fc2." in name):
            t.data = np.zeros_like(t.data)


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert (cfg.dim, cfg.heads, cfg.enc_layers, cfg.latent_dec_layers, cfg.time_dec_layers) == (256, 4, 10, 8, 10)
        assert cfg.signal_len == 2250

    def test_heads_must_divide(self):
        with pytest.raises(ValueError):
            ModelConfig(dim=10, heads=4)

    def test_round_trip(self):
        cfg = ModelConfig.toy()
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError):
            ModelConfig.from_dict({"width": 3})


class TestInit:
    def test_teacher_is_copy_and_frozen(self):
        m = _model()
        teach = m.teacher_params()
        assert teach and all(not t.requires_grad for t in teach.values())
        for name, t in teach.items():
            np.testing.assert_array_equal(t.data, m[name[len("teacher."):]].data)

    def test_seeded(self):
        a = init_params(tiny_model_config(), seed=3)
        b = init_params(tiny_model_config(), seed=3)
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)

    def test_fda_starts_at_half(self):
        assert not _model()["fda.W"].data.any()

    def test_is_teacher(self):
        assert is_teacher("teacher.encoder.norm.gamma") and not is_teacher("encoder.norm.gamma")


class TestEncoder:
    def test_five_visible_tokens(self, rng):
        m = _model()
        plan = _plan_with_visible(3, 4, [(0, 0), (0, 3), (1, 1), (2, 0), (2, 2)])
        z = m.encode_visible(rng.standard_normal((3, 4, 8)), plan)
        assert z.tokens.shape == (1, 5, 8)
        assert z.positions == [[(0, 0), (0, 3), (1, 1), (2, 0), (2, 2)]]

    def test_empty_visible_set(self, rng):
        with pytest.raises(EmptyVisibleSetError):
            _model().encode_visible(rng.standard_normal((3, 4, 8)), _plan_with_visible(3, 4, []))

    def test_plan_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            _model().encode_visible(rng.standard_normal((3, 4, 8)), sample_mask(3, 5, seed=0))

    def test_stack_permutation_equivariant(self, rng):
        m = _model()
        x = rng.standard_normal((1, 7, 8))
        perm = rng.permutation(7)
        out = m._stack(Tensor(x), "encoder", 1).data
        out_p = m._stack(Tensor(x[:, perm]), "encoder", 1).data
        np.testing.assert_allclose(out_p, out[:, perm], atol=1e-12)

    def test_zero_weights_zero_input(self):
        m = _model()
        for t in m.params.values():
            t.data = np.zeros_like(t.data)
        m.pos_table = np.zeros_like(m.pos_table)
        z = m.encode_visible(np.zeros((3, 4, 8)), sample_mask(3, 4, 0.0, k=3, seed=0))
        np.testing.assert_array_equal(z.tokens.data, 0.0)

    def test_padding_does_not_leak(self, rng):
        m = _model()
        p = rng.standard_normal((2, 3, 4, 8))
        small = _plan_with_visible(3, 4, [(0, 1), (2, 3)])
        big = MaskPlan.from_codes(np.zeros((3, 4), dtype=np.int8))
        alone = m.encode_visible(p[:1], [small]).tokens.data
        batched = m.encode_visible(p, [small, big])
        assert batched.tokens.shape == (2, 12, 8)
        np.testing.assert_allclose(batched.tokens.data[0, :2], alone[0], atol=1e-12)

    def test_lead_subset_single_lead(self, rng):
        cfg = tiny_model_config()
        m = CoReECG(cfg, seed=0, dtype=np.float64, lead_ids=[0])
        z = m.encode_visible(rng.standard_normal((1, 4, 8)), sample_mask(1, 4, 0.0, 0.0, 1, seed=0))
        assert z.tokens.shape == (1, 4, 8)


class TestDecoders:
    def test_time_decoder_shape(self, rng):
        m = _model()
        plans = [sample_mask(3, 4, 0.5, 0.2, 2, seed=s) for s in (1, 2)]
        plans = [p if p.V.any() else sample_mask(3, 4, 0.0, k=2, seed=0) for p in plans]
        z = m.encode_visible(rng.standard_normal((2, 3, 4, 8)), plans)
        assert m.decode_time(z).shape == (2, 3, 4, 8)
        assert m.decode_latent_global(z).shape == (2, 8)

    def test_mask_token_receives_gradient(self, rng):
        m = _model()
        p = rng.standard_normal((1, 3, 4, 8))
        plan = _plan_with_visible(3, 4, [(0, 0), (1, 2)])
        z = m.encode_visible(p, plan)
        backward(reconstruction_loss(p, m.decode_time(z), plan.M[None]))
        assert np.abs(m["time_decoder.mask_token"].grad).max() > 0

    def test_identity_blocks_mean_pool(self, rng):
        m = _model()
        m["latent_decoder.mask_token"].data = rng.standard_normal(8)
        _zero_residual_branches(m, "latent_decoder.")
        p = rng.standard_normal((1, 3, 4, 8))
        plan = _plan_with_visible(3, 4, [(0, 0), (1, 2), (2, 3)])
        z = m.encode_visible(p, plan)
        grid = np.empty((3, 4, 8))
        tok = iter(z.tokens.data[0])
        for c in range(3):
            for n in range(4):
                base = next(tok) if plan.V[c, n] else m["latent_decoder.mask_token"].data
                grid[c, n] = base + m["latent_decoder.lead_embed"].data[c] + m.pos_table[n]
        g, b = m["latent_decoder.norm.gamma"].data, m["latent_decoder.norm.beta"].data
        expected = layer_norm(grid.reshape(12, 8), g, b).data.mean(axis=0)
        np.testing.assert_allclose(m.decode_latent_global(z).data[0], expected, atol=1e-12)

    def test_duplicated_batch_identical(self, rng):
        m = _model()
        p = rng.standard_normal((1, 3, 4, 8))
        plan = _plan_with_visible(3, 4, [(0, 0), (2, 1)])
        z = m.encode_visible(np.concatenate([p, p]), [plan, plan])
        out = m.decode_latent_global(z).data
        assert out[0].tobytes() == out[1].tobytes()


class TestProjectionAndTeacher:
    def test_projection_zero_weights(self, rng):
        m = _model()
        for name in ("fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"):
            m[f"projection.{name}"].data[...] = 0.0
        assert not m.project(Tensor(rng.standard_normal((3, 8)))).data.any()

    def test_projection_shape(self, rng):
        assert _model().project(Tensor(rng.standard_normal((3, 8)))).shape == (3, 6)

    def test_teacher_equals_student_path_after_copy(self, rng):
        m = _model()
        x = rng.standard_normal((2, 3, 32))
        student = m.project(m.encode_all(x).data.mean(axis=1)).data
        np.testing.assert_allclose(m.teacher_forward(x).data, student, atol=1e-12)

    def test_teacher_gets_no_gradient(self, rng):
        m = _model()
        h = m.teacher_forward(rng.standard_normal((2, 3, 32)))
        assert not h.requires_grad

    def test_batch_independence(self, rng):
        m = _model()
        x = rng.standard_normal((3, 3, 32))
        full = m.teacher_forward(x).data
        np.testing.assert_allclose(m.teacher_forward(x[1:2]).data[0], full[1], atol=1e-12)


class TestEMA:
    def _diverged(self, rng):
        m = _model()
        for name, t in m.params.items():
            if name.startswith(("encoder.", "projection.")):
                t.data = t.data + rng.standard_normal(t.shape)
        return m

    def test_momentum_one_keeps_teacher(self, rng):
        m = self._diverged(rng)
        before = {k: t.data.copy() for k, t in m.teacher_params().items()}
        m.ema_update(1.0)
        for k, t in m.teacher_params().items():
            np.testing.assert_array_equal(t.data, before[k])

    def test_momentum_zero_copies_student(self, rng):
        m = self._diverged(rng)
        m.ema_update(0.0)
        for k, t in m.teacher_params().items():
            np.testing.assert_array_equal(t.data, m[k[len("teacher."):]].data)

    def test_scalar_example(self):
        m = _model()
        m["teacher.encoder.norm.beta"].data[...] = 1.0
        m["encoder.norm.beta"].data[...] = 0.0
        m.ema_update(0.9)
        np.testing.assert_allclose(m["teacher.encoder.norm.beta"].data, 0.9, rtol=1e-15)

    def test_range(self):
        with pytest.raises(ValueError):
            _model().ema_update(1.5)


class TestClassifier:
    def test_shape(self, rng):
        m = _model()
        m.add_classifier(4)
        assert m.classify(rng.standard_normal((5, 3, 32))).shape == (5, 4)

    def test_zero_head(self, rng):
        m = _model()
        m.add_classifier(4)
        m["head.weight"].data[...] = 0.0
        assert not m.classify(rng.standard_normal((2, 3, 32))).data.any()

    def test_lead_subset(self, rng):
        m = CoReECG(tiny_model_config(), seed=0, dtype=np.float64, lead_ids=[1])
        m.add_classifier(3)
        assert m.classify(rng.standard_normal((2, 1, 32))).shape == (2, 3)


class TestToyConfigs:
    @settings(max_examples=15, deadline=None)
    @given(heads=st.sampled_from([1, 2, 4]), mult=st.integers(1, 3), C=st.integers(1, 4), N=st.integers(1, 5),
           P=st.integers(2, 6), seed=st.integers(0, 1000))
    def test_forward_shapes(self, heads, mult, C, N, P, seed):
        dim = 4 * mult
        cfg = ModelConfig(dim=dim, heads=heads, enc_layers=1, latent_dec_layers=1, time_dec_layers=1,
                          patch_len=P, n_leads=C, n_patches=N, proj_hidden=5, proj_out=3, mlp_ratio=2)
        m = CoReECG(cfg, seed=seed, dtype=np.float64)
        r = np.random.default_rng(seed)
        plans = [sample_mask(C, N, 0.0, 0.0, 1, seed=seed + b) for b in range(2)]
        z = m.encode_visible(r.standard_normal((2, C, N, P)), plans)
        assert z.tokens.shape == (2, N, dim)
        assert m.decode_time(z).shape == (2, C, N, P)
        hs = m.project(m.decode_latent_global(z))
        assert hs.shape == (2, 3)
        assert m.teacher_forward(r.standard_normal((2, C, N * P))).shape == (2, 3)
        assert np.all(np.isfinite(hs.data))
