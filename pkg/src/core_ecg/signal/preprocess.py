"""Preprocessing: band-pass, resample, crop, z-score, patchify."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .records import EcgRecord, RecordError

HIGHPASS_HZ = 0.65
LOWPASS_HZ = 40.0
FILTER_ORDER = 4
TARGET_FS = 250.0
WINDOW_S = 10.0
CROP_LEN = 2250
PATCH_LEN = 75
ZSCORE_EPS = 1e-8


class FsTooLowError(RecordError):
    pass


class TooShortRecordError(RecordError):
    pass


class DivisibilityError(RecordError):
    pass


@dataclass
class PatchTensor:
    """``C x N x P`` patches of one crop."""

    data: np.ndarray
    patch_len: int
    record_id: str = ""
    offset: int = 0

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def butterworth_sos(fs: float, order: int = FILTER_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Second-order sections for the high-pass and low-pass stages."""
    hp = signal.butter(order, HIGHPASS_HZ, btype="highpass", fs=fs, output="sos")
    lp = signal.butter(order, LOWPASS_HZ, btype="lowpass", fs=fs, output="sos")
    return hp, lp


def bandpass_filter(rec: EcgRecord, order: int = FILTER_ORDER) -> EcgRecord:
    """Cascaded zero-phase Butterworth high-pass (0.65 Hz) and low-pass (40 Hz)."""
    if rec.fs <= 2 * LOWPASS_HZ:
        raise FsTooLowError(f"{rec.record_id}: fs={rec.fs} Hz puts {LOWPASS_HZ} Hz at or above Nyquist")
    hp, lp = butterworth_sos(rec.fs, order)
    x = np.asarray(rec.samples, dtype=np.float64)
    x = signal.sosfiltfilt(hp, x, axis=-1)
    x = signal.sosfiltfilt(lp, x, axis=-1)
    return rec.replace(samples=x)


def resample(rec: EcgRecord, target_fs: float = TARGET_FS) -> EcgRecord:
    """Linear interpolation onto a uniform ``target_fs`` grid."""
    if target_fs <= 0:
        raise ValueError(f"target_fs must be positive, got {target_fs}")
    if rec.fs == target_fs:
        return rec
    T = rec.n_samples
    t_new = int(round(T * target_fs / rec.fs))
    src = np.arange(T) / rec.fs
    dst = np.arange(t_new) / target_fs
    x = np.asarray(rec.samples, dtype=np.float64)
    out = np.stack([np.interp(dst, src, lead) for lead in x])
    return rec.replace(samples=out, fs=target_fs)


def crop_windows(rec: EcgRecord, window_s: float = WINDOW_S, mode: str = "sliding", seed: int = 0,
                 crop_len: int = CROP_LEN) -> list[EcgRecord]:
    """Fixed-length cropping.

    ``sliding`` cuts contiguous non-overlapping ``window_s`` segments and
    drops the remainder; ``random``/``center`` return one ``crop_len`` crop.
    """
    T = rec.n_samples
    if mode == "sliding":
        win = int(round(window_s * rec.fs))
        if T < win:
            raise TooShortRecordError(f"{rec.record_id}: {rec.duration_s:.2f} s is shorter than {window_s} s")
        out = []
        for i in range(T // win):
            seg = rec.replace(samples=rec.samples[:, i * win : (i + 1) * win], record_id=f"{rec.record_id}#w{i}")
            seg.meta["window_offset"] = i * win
            out.append(seg)
        return out
    if mode not in ("random", "center"):
        raise ValueError(f"unknown crop mode {mode!r}")
    if T < crop_len:
        raise TooShortRecordError(f"{rec.record_id}: {T} samples is shorter than crop length {crop_len}")
    if mode == "center":
        off = (T - crop_len) // 2
    else:
        off = int(np.random.default_rng(seed).integers(0, T - crop_len + 1))
    crop = rec.replace(samples=rec.samples[:, off : off + crop_len])
    crop.meta["crop_offset"] = off
    return [crop]


def zscore(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    return (x - mu) / np.maximum(sd, ZSCORE_EPS)


def zscore_normalize(rec: EcgRecord) -> EcgRecord:
    """Per-lead temporal z-score; flat leads map to zeros."""
    return rec.replace(samples=zscore(rec.samples))


def patchify(rec: EcgRecord, patch_len: int = PATCH_LEN) -> PatchTensor:
    C, T = rec.samples.shape
    if T % patch_len:
        raise DivisibilityError(f"{rec.record_id}: length {T} not divisible by patch length {patch_len}")
    data = np.asarray(rec.samples).reshape(C, T // patch_len, patch_len)
    return PatchTensor(data, patch_len, rec.record_id, int(rec.meta.get("crop_offset", 0)))


def prepare_windows(rec: EcgRecord, target_fs: float = TARGET_FS, window_s: float = WINDOW_S) -> list[EcgRecord]:
    """Filter, resample and cut into 10 s windows (not yet cropped or normalised)."""
    filtered = bandpass_filter(rec)
    return crop_windows(resample(filtered, target_fs), window_s=window_s, mode="sliding")


def preprocess_record(rec: EcgRecord, mode: str = "center", seed: int = 0, target_fs: float = TARGET_FS,
                      crop_len: int = CROP_LEN, patch_len: int = PATCH_LEN) -> list[PatchTensor]:
    """Full pipeline; one patch tensor per 10 s window."""
    out = []
    for win in prepare_windows(rec, target_fs):
        (crop,) = crop_windows(win, mode=mode, seed=seed, crop_len=crop_len)
        out.append(patchify(zscore_normalize(crop), patch_len))
    return out


def build_cache(records, splits: dict[str, str], class_names, multilabel: bool = False,
                target_fs: float = TARGET_FS, crop_len: int = CROP_LEN, patch_len: int = PATCH_LEN):
    """Run the pipeline over ``records`` and stack every window into a :class:`WindowCache`.

    Records that fail are skipped; returns ``(cache, failures)`` where
    ``failures`` lists ``(record_id, message)``.
    """
    from .dataset import WindowCache

    windows, patches, labels, ids, split_of, prov = [], [], [], [], [], []
    failures: list[tuple[str, str]] = []
    leads = None
    for rec in records:
        try:
            wins = prepare_windows(rec, target_fs)
            for win in wins:
                (crop,) = crop_windows(win, mode="center", crop_len=crop_len)
                patches.append(patchify(zscore_normalize(crop), patch_len).data)
                windows.append(win.samples)
                labels.append(rec.label)
                ids.append(win.record_id)
                split_of.append(splits[rec.record_id])
                prov.append({"record_id": rec.record_id, "window": win.record_id, "fs_in": rec.fs,
                             "window_offset": int(win.meta.get("window_offset", 0))})
            leads = leads or list(rec.leads)
        except (RecordError, KeyError) as exc:
            failures.append((rec.record_id, str(exc)))
    if not windows:
        raise RecordError("no record survived preprocessing")
    if multilabel:
        lab = np.zeros((len(labels), len(class_names)), dtype=np.int64)
        for i, l in enumerate(labels):
            lab[i, list(np.atleast_1d(l))] = 1
    else:
        lab = np.asarray(labels, dtype=np.int64)
    cache = WindowCache(np.stack(windows).astype(np.float32), np.stack(patches).astype(np.float32), lab, ids,
                        split_of, leads, list(class_names), multilabel, target_fs, prov)
    return cache, failures
