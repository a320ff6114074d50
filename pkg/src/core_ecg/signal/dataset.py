"""Manifests, patient-disjoint splits, and the preprocessed window cache."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")


@dataclass
class ManifestEntry:
    path: str | None
    record_id: str
    label: int | list[int] | None
    split: str
    patient_id: str | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    class_names: list[str]
    multilabel: bool = False

    def __post_init__(self):
        seen = {}
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(f"{e.record_id}: unknown split {e.split!r}")
            if e.record_id in seen:
                raise ValueError(f"record {e.record_id} listed twice")
            seen[e.record_id] = e.split
        by_patient: dict[str, set] = {}
        for e in self.entries:
            if e.patient_id is not None:
                by_patient.setdefault(e.patient_id, set()).add(e.split)
        leaks = [p for p, s in by_patient.items() if len(s) > 1]
        if leaks:
            raise ValueError(f"patients span several splits: {leaks[:5]}")

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def to_json(self) -> dict:
        return {"records": [asdict(e) for e in self.entries], "class_names": list(self.class_names),
                "multilabel": bool(self.multilabel)}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        doc = json.loads(Path(path).read_text())
        return cls([ManifestEntry(**r) for r in doc["records"]], doc["class_names"], doc.get("multilabel", False))


def assign_splits(record_ids, patient_ids=None, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> dict[str, str]:
    """Assign each record to train/val/test with whole patients kept together."""
    if not np.isclose(sum(fractions), 1.0):
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    patient_ids = list(patient_ids) if patient_ids is not None else list(record_ids)
    patients = sorted(set(patient_ids))
    order = np.random.default_rng(seed).permutation(len(patients))
    n = len(patients)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    which = {}
    for rank, pi in enumerate(order):
        which[patients[pi]] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return {rid: which[pid] for rid, pid in zip(record_ids, patient_ids)}


def stable_hash(*parts) -> int:
    """Process-independent 32-bit hash for seed derivation."""
    return zlib.crc32("\x1f".join(str(p) for p in parts).encode())


def derived_rng(seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, stable_hash(*parts)]))


@dataclass
class WindowCache:
    """Filtered, resampled 10 s windows plus their centred eval patches.

    ``windows`` is ``[R, C, W]`` (unnormalised), ``patches`` ``[R, C, N, P]``
    (centre crop, z-scored). ``labels`` is ``[R]`` int or ``[R, n_classes]``
    multi-hot.
    """

    windows: np.ndarray
    patches: np.ndarray
    labels: np.ndarray
    record_ids: list[str]
    splits: list[str]
    leads: list[str]
    class_names: list[str]
    multilabel: bool = False
    fs: float = 250.0
    provenance: list[dict] = field(default_factory=list)

    def save(self, path) -> None:
        meta = {"record_ids": self.record_ids, "splits": self.splits, "leads": self.leads,
                "class_names": self.class_names, "multilabel": self.multilabel, "fs": self.fs,
                "provenance": self.provenance}
        with open(path, "wb") as fh:
            np.savez(fh, windows=self.windows, patches=self.patches, labels=self.labels,
                     meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8))

    @classmethod
    def load(cls, path) -> "WindowCache":
        with np.load(path) as z:
            meta = json.loads(z["meta"].tobytes())
            return cls(z["windows"], z["patches"], z["labels"], meta["record_ids"], meta["splits"], meta["leads"],
                       meta["class_names"], meta["multilabel"], meta["fs"], meta.get("provenance", []))

    def indices(self, split: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.splits) if s == split], dtype=np.int64)

    def select_leads(self, names) -> "WindowCache":
        idx = [self.leads.index(n) for n in names]
        return WindowCache(self.windows[:, idx], self.patches[:, idx], self.labels, self.record_ids, self.splits,
                           list(names), self.class_names, self.multilabel, self.fs, self.provenance)
