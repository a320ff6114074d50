"""ECG ingestion, synthetic data and preprocessing."""

from .dataset import DatasetManifest, ManifestEntry, WindowCache, assign_splits, derived_rng, stable_hash
from .preprocess import (
    CROP_LEN,
    PATCH_LEN,
    TARGET_FS,
    DivisibilityError,
    FsTooLowError,
    PatchTensor,
    TooShortRecordError,
    bandpass_filter,
    build_cache,
    butterworth_sos,
    crop_windows,
    patchify,
    prepare_windows,
    preprocess_record,
    resample,
    zscore,
    zscore_normalize,
)
from .records import (
    LEAD_NAMES,
    DimensionMismatchError,
    EcgRecord,
    MalformedHeaderError,
    NaNContentError,
    RecordError,
    read_record,
    write_record,
)
from .synthetic import CLASS_NAMES, InvalidClassMixError, generate_synthetic, synth_record

__all__ = [
    "EcgRecord", "LEAD_NAMES", "read_record", "write_record",
    "RecordError", "MalformedHeaderError", "DimensionMismatchError", "NaNContentError",
    "generate_synthetic", "synth_record", "CLASS_NAMES", "InvalidClassMixError",
    "bandpass_filter", "build_cache", "butterworth_sos", "resample", "crop_windows", "zscore", "zscore_normalize", "patchify",
    "prepare_windows", "preprocess_record", "PatchTensor",
    "FsTooLowError", "TooShortRecordError", "DivisibilityError", "TARGET_FS", "CROP_LEN", "PATCH_LEN",
    "DatasetManifest", "ManifestEntry", "WindowCache", "assign_splits", "derived_rng", "stable_hash",
]
