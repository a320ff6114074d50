"""Synthetic 12-lead ECG with class-dependent P-QRS-T morphology.

Each beat is a sum of five Gaussian bumps (P, Q, R, S, T). Every wave has
a direction in the frontal plane; limb leads I and III are projections of
that dipole (plus independent noise), and lead II is formed as I + III so
Einthoven's law holds to float32 rounding. The augmented limb leads follow
from I/II/III; precordial leads are independent random mixtures of the
same wave components plus noise.

Classes:
    0 normal        heart rate 60-80 bpm
    1 tachycardic   heart rate 120-160 bpm
    2 wide QRS      Q/R/S widths and offsets x2.5
    3 absent P      P amplitude 0
"""

from __future__ import annotations

import numpy as np

from .dataset import DatasetManifest, ManifestEntry, assign_splits
from .records import LEAD_NAMES, EcgRecord

CLASS_NAMES = ("normal", "tachycardia", "wide_qrs", "absent_p")

# (amplitude mV, offset from R peak s, width s, frontal-plane angle deg)
_WAVES = {
    "P": (0.15, -0.16, 0.022, 50.0),
    "Q": (-0.12, -0.028, 0.009, 30.0),
    "R": (1.2, 0.0, 0.011, 55.0),
    "S": (-0.3, 0.03, 0.011, 80.0),
    "T": (0.32, 0.26, 0.045, 45.0),
}
_WAVE_ORDER = ("P", "Q", "R", "S", "T")
# Typical precordial gains per wave (rows V1..V6), R progression from small to tall.
_PRECORDIAL = np.array(
    [
        [0.6, 0.3, 0.25, 2.4, 0.4],
        [0.7, 0.4, 0.6, 2.8, 0.9],
        [0.8, 0.6, 1.0, 2.0, 1.0],
        [0.8, 0.8, 1.3, 1.2, 1.0],
        [0.8, 0.9, 1.2, 0.6, 0.9],
        [0.7, 0.9, 1.0, 0.3, 0.8],
    ]
)


class InvalidClassMixError(ValueError):
    pass


def _check_mix(class_mix) -> np.ndarray:
    mix = np.asarray(class_mix, dtype=np.float64)
    if mix.shape != (len(CLASS_NAMES),) or np.any(mix < 0) or not np.isclose(mix.sum(), 1.0, atol=1e-6):
        raise InvalidClassMixError(
            f"class_mix must be {len(CLASS_NAMES)} non-negative weights summing to 1, got {list(class_mix)}"
        )
    return mix / mix.sum()


def beat_params(label: int, rng: np.random.Generator) -> dict:
    """Per-record generation parameters for ``label``."""
    hr = rng.uniform(120.0, 160.0) if label == 1 else rng.uniform(60.0, 80.0)
    return {
        "class": int(label),
        "heart_rate": float(hr),
        "p_amplitude": 0.0 if label == 3 else float(_WAVES["P"][0] * rng.uniform(0.8, 1.2)),
        "qrs_width_scale": 2.5 if label == 2 else 1.0,
        "rr_jitter": 0.03,
    }


def _wave_components(params: dict, t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-wave source signals ``[5, T]`` for one record."""
    rr_mean = 60.0 / params["heart_rate"]
    # P-R and Q-T intervals shorten with rate
    interval_scale = np.sqrt(rr_mean)
    qrs = params["qrs_width_scale"]
    duration = t[-1] + (t[1] - t[0])
    beats = []
    tb = rng.uniform(0.0, rr_mean)
    while tb < duration + 0.5:
        beats.append(tb)
        tb += rr_mean * (1.0 + params["rr_jitter"] * rng.standard_normal())
    beats = np.asarray(beats)

    comps = np.zeros((len(_WAVE_ORDER), t.size))
    for i, w in enumerate(_WAVE_ORDER):
        amp, off, width, _ = _WAVES[w]
        if w == "P":
            amp = params["p_amplitude"]
            off = off * interval_scale
        elif w == "T":
            off = off * interval_scale
        else:
            amp = amp * rng.uniform(0.9, 1.1)
            off, width = off * qrs, width * qrs
        if amp == 0.0:
            continue
        centers = beats + off
        near = np.abs(t[:, None] - centers[None, :]) < 6 * width
        d = np.where(near, t[:, None] - centers[None, :], np.inf)
        comps[i] = amp * np.exp(-0.5 * (d / width) ** 2).sum(axis=1)
    return comps


def synth_record(label: int, seed, fs: float = 500.0, duration_s: float = 10.0,
                 record_id: str = "", noise_mv: float = 0.02) -> EcgRecord:
    rng = np.random.default_rng(seed)
    params = beat_params(label, rng)
    T = int(round(fs * duration_s))
    t = np.arange(T) / fs
    comps = _wave_components(params, t, rng)

    angles = np.deg2rad([_WAVES[w][3] for w in _WAVE_ORDER]) + np.deg2rad(rng.normal(0.0, 8.0, 5))
    wander = 0.05 * np.sin(2 * np.pi * rng.uniform(0.1, 0.3) * t + rng.uniform(0, 2 * np.pi))

    def limb(lead_angle_deg):
        gain = np.cos(angles - np.deg2rad(lead_angle_deg))
        return gain @ comps + wander + noise_mv * rng.standard_normal(T)

    lead_i = limb(0.0).astype(np.float32)
    lead_iii = limb(120.0).astype(np.float32)
    lead_ii = lead_i + lead_iii  # float32 sum: Einthoven up to rounding
    i64, ii64, iii64 = lead_i.astype(np.float64), lead_ii.astype(np.float64), lead_iii.astype(np.float64)
    avr = -(i64 + ii64) / 2
    avl = (i64 - iii64) / 2
    avf = (ii64 + iii64) / 2

    # components already carry wave polarity; gains are magnitudes
    gains = _PRECORDIAL * rng.uniform(0.8, 1.2, _PRECORDIAL.shape)
    gains[0, 2] *= -1.0  # rS pattern in V1
    precordial = gains @ comps + wander + noise_mv * rng.standard_normal((6, T))

    samples = np.empty((12, T), dtype=np.float32)
    samples[0], samples[1], samples[2] = lead_i, lead_ii, lead_iii
    samples[3:6] = np.stack([avr, avl, avf])
    samples[6:] = precordial
    return EcgRecord(samples, fs, record_id=record_id, label=int(label), leads=LEAD_NAMES, meta=params)


def generate_synthetic(n_records: int, fs: float = 500.0, duration_s: float = 10.0,
                       class_mix=(0.25, 0.25, 0.25, 0.25), seed: int = 0,
                       split_fractions=(0.8, 0.1, 0.1)) -> tuple[list[EcgRecord], DatasetManifest]:
    """Generate ``n_records`` labelled records and a split manifest (paths unset)."""
    if n_records < 1:
        raise ValueError("n_records must be >= 1")
    mix = _check_mix(class_mix)
    root = np.random.SeedSequence(seed)
    label_rng = np.random.default_rng(root.spawn(1)[0])
    labels = label_rng.choice(len(CLASS_NAMES), size=n_records, p=mix)
    children = root.spawn(n_records + 1)[1:]
    records = []
    for i, (lab, ss) in enumerate(zip(labels, children)):
        rid = f"syn{seed}_{i:05d}"
        rec = synth_record(int(lab), ss, fs=fs, duration_s=duration_s, record_id=rid)
        rec.meta["seed_entropy"] = str(ss.entropy)
        rec.meta["seed_spawn_key"] = list(ss.spawn_key)
        records.append(rec)
    ids = [r.record_id for r in records]
    splits = assign_splits(ids, patient_ids=ids, fractions=split_fractions, seed=seed)
    entries = [ManifestEntry(path=None, record_id=r.record_id, label=r.label, split=splits[r.record_id],
                             patient_id=r.record_id) for r in records]
    return records, DatasetManifest(entries=entries, class_names=list(CLASS_NAMES), multilabel=False)
