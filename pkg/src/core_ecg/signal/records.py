"""ECG records and their on-disk formats (CECG binary, CSV)."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")

CECG_MAGIC = b"CECG"
CECG_VERSION = 1
_HEADER = struct.Struct("<4sHHIf")


class RecordError(ValueError):
    """Base class for ingestion errors."""


class MalformedHeaderError(RecordError):
    pass


class DimensionMismatchError(RecordError):
    pass


class NaNContentError(RecordError):
    pass


@dataclass
class EcgRecord:
    """A ``C x T`` multi-lead recording in millivolts."""

    samples: np.ndarray
    fs: float
    record_id: str = ""
    label: int | list[int] | None = None
    leads: tuple[str, ...] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise DimensionMismatchError(f"{self.record_id or 'record'}: samples must be C x T with C, T >= 1, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise NaNContentError(f"{self.record_id or 'record'}: samples contain NaN or Inf")
        if self.leads is None:
            self.leads = LEAD_NAMES if s.shape[0] == 12 else tuple(f"L{i}" for i in range(s.shape[0]))
        self.leads = tuple(self.leads)
        if len(self.leads) != s.shape[0]:
            raise DimensionMismatchError(f"{len(self.leads)} lead names for {s.shape[0]} leads")
        if s.shape[0] == 12 and self.leads != LEAD_NAMES:
            raise RecordError(f"12-lead record must use standard lead order {LEAD_NAMES}, got {self.leads}")
        self.samples = s
        self.fs = float(self.fs)

    @property
    def n_leads(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs

    def replace(self, **changes) -> "EcgRecord":
        kw = dict(samples=self.samples, fs=self.fs, record_id=self.record_id, label=self.label,
                  leads=self.leads, meta=dict(self.meta))
        kw.update(changes)
        return EcgRecord(**kw)

    def select_leads(self, names) -> "EcgRecord":
        idx = [self.leads.index(n) for n in names]
        return EcgRecord(self.samples[idx], self.fs, self.record_id, self.label, tuple(names), dict(self.meta))


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt:
        return fmt.lower()
    return "csv" if path.suffix.lower() == ".csv" else "cecg"


def write_record(rec: EcgRecord, path, fmt: str | None = None) -> None:
    """Serialize ``rec``; CECG round-trips bit-exactly (float32 samples)."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "cecg":
        C, T = rec.samples.shape
        meta = {"record_id": rec.record_id, "label": rec.label, "leads": list(rec.leads), "meta": rec.meta}
        mbytes = json.dumps(meta, sort_keys=True, default=_json_default).encode()
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(CECG_MAGIC, CECG_VERSION, C, T, rec.fs))
            fh.write(np.ascontiguousarray(rec.samples, dtype="<f4").tobytes())
            fh.write(struct.pack("<I", len(mbytes)))
            fh.write(mbytes)
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(rec.leads)
            for row in np.asarray(rec.samples, dtype=np.float64).T:
                w.writerow([repr(float(v)) for v in row])
    else:
        raise ValueError(f"unknown record format {fmt!r}")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def read_record(path, fmt: str | None = None, fs: float = 500.0) -> EcgRecord:
    """Load a record. ``fs`` is used only for CSV, which carries no rate."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "cecg":
        return _read_cecg(path)
    if fmt == "csv":
        return _read_csv(path, fs)
    raise ValueError(f"unknown record format {fmt!r}")


def _read_cecg(path: Path) -> EcgRecord:
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: file shorter than CECG header")
    magic, version, C, T, fs = _HEADER.unpack_from(blob, 0)
    if magic != CECG_MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if version != CECG_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {version}")
    if C < 1 or T < 1 or not np.isfinite(fs) or fs <= 0:
        raise MalformedHeaderError(f"{path}: invalid header C={C} T={T} fs={fs}")
    start = _HEADER.size
    nbytes = C * T * 4
    body = blob[start : start + nbytes]
    if len(body) != nbytes:
        raise DimensionMismatchError(f"{path}: expected {nbytes} sample bytes for {C}x{T}, found {len(body)}")
    samples = np.frombuffer(body, dtype="<f4").reshape(C, T).astype(np.float32)
    rest = blob[start + nbytes :]
    meta: dict = {}
    if rest:
        if len(rest) < 4:
            raise DimensionMismatchError(f"{path}: {len(rest)} trailing bytes after samples")
        (mlen,) = struct.unpack_from("<I", rest, 0)
        if len(rest) != 4 + mlen:
            raise DimensionMismatchError(f"{path}: metadata block length {mlen} does not match {len(rest) - 4} bytes")
        try:
            meta = json.loads(rest[4:])
        except json.JSONDecodeError as exc:
            raise MalformedHeaderError(f"{path}: invalid metadata JSON ({exc})") from None
    if not np.all(np.isfinite(samples)):
        raise NaNContentError(f"{path}: samples contain NaN or Inf")
    label = meta.get("label")
    return EcgRecord(
        samples,
        fs,
        record_id=meta.get("record_id") or path.stem,
        label=label,
        leads=tuple(meta["leads"]) if meta.get("leads") else None,
        meta=meta.get("meta", {}),
    )


def _read_csv(path: Path, fs: float) -> EcgRecord:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise MalformedHeaderError(f"{path}: missing header row")
    names = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise DimensionMismatchError(f"{path}: no sample rows")
    for i, r in enumerate(body):
        if len(r) != len(names):
            raise DimensionMismatchError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(names)}")
    try:
        data = np.array(body, dtype=np.float64).T
    except ValueError as exc:
        raise MalformedHeaderError(f"{path}: non-numeric sample ({exc})") from None
    if not np.all(np.isfinite(data)):
        raise NaNContentError(f"{path}: samples contain NaN or Inf")
    if len(names) == 12 and set(names) == set(LEAD_NAMES):
        order = [names.index(n) for n in LEAD_NAMES]
        data, names = data[order], list(LEAD_NAMES)
    return EcgRecord(data, fs, record_id=path.stem, leads=tuple(names))
