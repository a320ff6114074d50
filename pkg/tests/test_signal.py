import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import butterworth_gain_db, rr_intervals
from scipy import signal as sps

from core_ecg.signal import (
    CLASS_NAMES,
    LEAD_NAMES,
    DatasetManifest,
    DimensionMismatchError,
    DivisibilityError,
    EcgRecord,
    FsTooLowError,
    InvalidClassMixError,
    MalformedHeaderError,
    NaNContentError,
    TooShortRecordError,
    WindowCache,
    assign_splits,
    bandpass_filter,
    build_cache,
    butterworth_sos,
    crop_windows,
    generate_synthetic,
    patchify,
    preprocess_record,
    read_record,
    resample,
    synth_record,
    write_record,
    zscore_normalize,
)


def _rec(samples, fs=250.0, **kw):
    return EcgRecord(np.asarray(samples, dtype=np.float64), fs, **kw)


def _sine(freq, fs=500.0, seconds=60.0):
    t = np.arange(int(fs * seconds)) / fs
    return _rec(np.sin(2 * np.pi * freq * t)[None], fs=fs)


class TestRecordIO:
    def test_minimal_cecg(self, tmp_path):
        rec = _rec([[0.0, 1.0, 0.0, -1.0]], record_id="m")
        write_record(rec, tmp_path / "m.cecg")
        back = read_record(tmp_path / "m.cecg")
        np.testing.assert_array_equal(back.samples, [[0.0, 1.0, 0.0, -1.0]])
        assert back.fs == 250.0 and back.n_leads == 1

    def test_cecg_round_trip_bitwise(self, tmp_path, rng):
        rec = EcgRecord(rng.standard_normal((12, 500)).astype(np.float32), 500.0, "r1", label=2,
                        meta={"a": [1, 2]})
        write_record(rec, tmp_path / "r.cecg")
        back = read_record(tmp_path / "r.cecg")
        assert back.samples.tobytes() == rec.samples.tobytes()
        assert back.label == 2 and back.leads == LEAD_NAMES and back.meta == {"a": [1, 2]}

    def test_cecg_header_layout(self, tmp_path):
        write_record(_rec([[1.0, 2.0]], fs=250.0), tmp_path / "h.cecg")
        raw = (tmp_path / "h.cecg").read_bytes()
        assert raw[:4] == b"CECG"
        assert int.from_bytes(raw[4:6], "little") == 1
        assert int.from_bytes(raw[6:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 2
        np.testing.assert_array_equal(np.frombuffer(raw[16:24], "<f4"), [1.0, 2.0])

    def test_csv_twelve_leads(self, tmp_path, rng):
        x = rng.standard_normal((12, 2500))
        write_record(_rec(x, fs=250.0), tmp_path / "r.csv")
        back = read_record(tmp_path / "r.csv", fs=250.0)
        assert back.samples.shape == (12, 2500)
        np.testing.assert_allclose(back.samples, x, atol=1e-6)

    def test_csv_reorders_leads(self, tmp_path):
        cols = list(reversed(LEAD_NAMES))
        rows = [",".join(cols)] + [",".join(str(float(LEAD_NAMES.index(c))) for c in cols)] * 3
        (tmp_path / "r.csv").write_text("\n".join(rows) + "\n")
        back = read_record(tmp_path / "r.csv")
        np.testing.assert_array_equal(back.samples[:, 0], np.arange(12))

    def test_nan_rejected(self, tmp_path):
        (tmp_path / "n.csv").write_text("L0\n1.0\nnan\n")
        with pytest.raises(NaNContentError):
            read_record(tmp_path / "n.csv")

    def test_nan_in_cecg(self, tmp_path):
        write_record(_rec([[1.0, 2.0]]), tmp_path / "n.cecg")
        raw = bytearray((tmp_path / "n.cecg").read_bytes())
        raw[16:20] = np.array([np.nan], "<f4").tobytes()
        (tmp_path / "n.cecg").write_bytes(bytes(raw))
        with pytest.raises(NaNContentError):
            read_record(tmp_path / "n.cecg")

    def test_malformed_header(self, tmp_path):
        (tmp_path / "b.cecg").write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(MalformedHeaderError):
            read_record(tmp_path / "b.cecg")

    def test_dimension_mismatch(self, tmp_path):
        write_record(_rec(np.ones((2, 10))), tmp_path / "d.cecg")
        raw = (tmp_path / "d.cecg").read_bytes()
        (tmp_path / "d.cecg").write_bytes(raw[:40])
        with pytest.raises(DimensionMismatchError):
            read_record(tmp_path / "d.cecg")

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            write_record(_rec([[1.0]]), tmp_path / "missing" / "x.cecg")

    def test_wrong_lead_order(self):
        with pytest.raises(Exception):
            EcgRecord(np.zeros((12, 4)), 250.0, leads=tuple(reversed(LEAD_NAMES)))


class TestSynthetic:
    def test_einthoven(self):
        rec = synth_record(0, 7)
        assert np.abs(rec.samples[1].astype(np.float64)
                      - (rec.samples[0].astype(np.float64) + rec.samples[2])).max() <= 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_tachycardia_rr(self, seed):
        rec = synth_record(1, seed)
        assert rr_intervals(rec.samples[1].astype(np.float64), rec.fs).mean() < 0.5

    @pytest.mark.parametrize("seed", range(5))
    def test_normal_rr(self, seed):
        rr = rr_intervals(synth_record(0, seed).samples[1].astype(np.float64), 500.0)
        assert 0.7 < rr.mean() < 1.1

    def test_absent_p_logged(self):
        assert synth_record(3, 1).meta["p_amplitude"] == 0.0

    def test_wide_qrs_logged(self):
        assert synth_record(2, 1).meta["qrs_width_scale"] == 2.5

    def test_class_mix_one_hot(self):
        recs, man = generate_synthetic(20, class_mix=(1, 0, 0, 0), seed=2)
        assert {r.label for r in recs} == {0}
        assert man.class_names == list(CLASS_NAMES)

    @pytest.mark.parametrize("mix", [(0.5, 0.5, 0.5, 0.5), (1.0, 0.0), (-0.5, 0.5, 0.5, 0.5)])
    def test_invalid_mix(self, mix):
        with pytest.raises(InvalidClassMixError):
            generate_synthetic(3, class_mix=mix)

    def test_seeded(self):
        a, _ = generate_synthetic(3, seed=11)
        b, _ = generate_synthetic(3, seed=11)
        for x, y in zip(a, b):
            assert x.samples.tobytes() == y.samples.tobytes()

    def test_manifest_splits(self):
        _, man = generate_synthetic(50, seed=0)
        counts = {s: len(man.split(s)) for s in ("train", "val", "test")}
        assert counts == {"train": 40, "val": 5, "test": 5}


class TestManifest:
    def test_patient_leakage_rejected(self):
        from core_ecg.signal import ManifestEntry

        entries = [ManifestEntry("a", "r1", 0, "train", "p1"), ManifestEntry("b", "r2", 0, "test", "p1")]
        with pytest.raises(ValueError, match="patients"):
            DatasetManifest(entries, ["x"])

    def test_duplicate_rejected(self):
        from core_ecg.signal import ManifestEntry

        entries = [ManifestEntry("a", "r1", 0, "train"), ManifestEntry("b", "r1", 0, "test")]
        with pytest.raises(ValueError, match="twice"):
            DatasetManifest(entries, ["x"])

    def test_assign_splits_patient_disjoint(self):
        ids = [f"r{i}" for i in range(60)]
        patients = [f"p{i // 3}" for i in range(60)]
        splits = assign_splits(ids, patients, seed=4)
        by_patient = {}
        for rid, pid in zip(ids, patients):
            by_patient.setdefault(pid, set()).add(splits[rid])
        assert all(len(s) == 1 for s in by_patient.values())

    def test_save_load(self, tmp_path):
        _, man = generate_synthetic(6, seed=1)
        man.save(tmp_path / "m.json")
        assert DatasetManifest.load(tmp_path / "m.json").to_json() == man.to_json()


class TestFilter:
    def test_designed_response_matches_analytic(self):
        hp, lp = butterworth_sos(500.0)
        f = np.array([0.1, 0.65, 5.0, 10.0, 40.0, 100.0])
        _, h1 = sps.sosfreqz(hp, worN=f, fs=500.0)
        _, h2 = sps.sosfreqz(lp, worN=f, fs=500.0)
        db = 20 * np.log10(np.abs(h1 * h2) ** 2)
        np.testing.assert_allclose(db, [butterworth_gain_db(v, 500.0) for v in f], atol=1e-6)

    def test_ten_hz_passes(self):
        out = bandpass_filter(_sine(10.0)).samples[0]
        mid = out[5000:-5000]
        gain = 20 * np.log10(np.sqrt(2) * mid.std())
        assert abs(gain) <= 1.0

    def test_point_one_hz_attenuated(self):
        out = bandpass_filter(_sine(0.1, seconds=120.0)).samples[0]
        mid = out[15000:-15000]
        assert 20 * np.log10(np.sqrt(2) * mid.std()) <= -20.0

    def test_zero_in_zero_out(self):
        np.testing.assert_array_equal(bandpass_filter(_rec(np.zeros((2, 3000)), fs=500.0)).samples, 0.0)

    def test_length_preserved(self, rng):
        rec = _rec(rng.standard_normal((3, 2777)), fs=500.0)
        assert bandpass_filter(rec).samples.shape == (3, 2777)

    def test_fs_too_low(self):
        with pytest.raises(FsTooLowError):
            bandpass_filter(_rec(np.zeros((1, 1000)), fs=80.0))


class TestResampleCrop:
    def test_halving(self, rng):
        out = resample(_rec(rng.standard_normal((2, 5000)), fs=500.0), 250.0)
        assert out.fs == 250.0 and out.n_samples == 2500

    def test_identity(self, rng):
        rec = _rec(rng.standard_normal((2, 100)))
        assert resample(rec, 250.0).samples.tobytes() == rec.samples.tobytes()

    def test_constant(self):
        out = resample(_rec(np.full((1, 999), 3.25), fs=500.0), 250.0)
        np.testing.assert_allclose(out.samples, 3.25)

    def test_bad_target(self):
        with pytest.raises(ValueError):
            resample(_rec(np.ones((1, 10))), 0.0)

    def test_center_crop(self):
        rec = _rec(np.arange(2500, dtype=float)[None])
        (crop,) = crop_windows(rec, mode="center")
        assert crop.samples[0, 0] == 125 and crop.samples[0, -1] == 2374

    def test_sliding_25s(self):
        segs = crop_windows(_rec(np.zeros((1, 25 * 250))), mode="sliding")
        assert len(segs) == 2

    @settings(max_examples=25, deadline=None)
    @given(duration=st.floats(10.0, 65.0))
    def test_sliding_count(self, duration):
        T = int(round(duration * 250))
        segs = crop_windows(_rec(np.zeros((1, T))), mode="sliding")
        assert len(segs) == T // 2500

    def test_short_record(self):
        with pytest.raises(TooShortRecordError):
            crop_windows(_rec(np.zeros((1, 9 * 250))), mode="sliding")

    def test_random_crop_seeded(self, rng):
        rec = _rec(rng.standard_normal((1, 2500)))
        a = crop_windows(rec, mode="random", seed=5)[0]
        b = crop_windows(rec, mode="random", seed=5)[0]
        assert a.samples.tobytes() == b.samples.tobytes() and a.n_samples == 2250


class TestNormalizePatch:
    def test_zscore(self):
        out = zscore_normalize(_rec([[1.0, 2.0, 3.0]])).samples[0]
        assert abs(out.mean()) < 1e-12 and abs(out.std() - 1.0) < 1e-12

    def test_constant_lead(self):
        np.testing.assert_array_equal(zscore_normalize(_rec([[5.0, 5.0, 5.0]])).samples, 0.0)

    def test_idempotent(self, rng):
        once = zscore_normalize(_rec(rng.standard_normal((3, 200))))
        np.testing.assert_allclose(zscore_normalize(once).samples, once.samples, atol=1e-6)

    def test_patch_shapes(self):
        assert patchify(_rec(np.zeros((12, 2250)))).data.shape == (12, 30, 75)
        assert patchify(_rec(np.zeros((1, 75)))).data.shape == (1, 1, 75)

    def test_divisibility(self):
        with pytest.raises(DivisibilityError):
            patchify(_rec(np.zeros((1, 2251))))


class TestPipeline:
    def test_synthetic_shapes(self, small_dataset):
        records, _ = small_dataset
        for rec in records:
            (pt,) = preprocess_record(rec)
            assert pt.data.shape == (12, 30, 75)
            assert not np.isnan(pt.data).any()

    def test_250hz_single_center_crop(self):
        rec = synth_record(0, 3, fs=250.0)
        out = preprocess_record(rec)
        assert len(out) == 1 and out[0].offset == 125

    def test_deterministic(self):
        rec = synth_record(2, 9)
        a = preprocess_record(rec, mode="random", seed=3)[0].data
        b = preprocess_record(rec, mode="random", seed=3)[0].data
        assert a.tobytes() == b.tobytes()

    def test_cache_round_trip(self, small_cache, tmp_path):
        small_cache.save(tmp_path / "c.npz")
        back = WindowCache.load(tmp_path / "c.npz")
        assert back.patches.tobytes() == small_cache.patches.tobytes()
        assert back.record_ids == small_cache.record_ids and back.splits == small_cache.splits

    def test_cache_skips_short(self):
        recs = [synth_record(0, 1, record_id="ok"), synth_record(0, 2, duration_s=9.0, record_id="short")]
        cache, failures = build_cache(recs, {"ok": "train", "short": "train"}, CLASS_NAMES)
        assert cache.record_ids == ["ok#w0"]
        assert [f[0] for f in failures] == ["short"]

    def test_select_leads(self, small_cache):
        sub = small_cache.select_leads(["I"])
        assert sub.patches.shape[1:] == (1, 30, 75)
        np.testing.assert_array_equal(sub.windows[:, 0], small_cache.windows[:, 0])
