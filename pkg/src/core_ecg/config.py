"""Run configuration: one JSON document validated against a published schema."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import jsonschema

from .model import ModelConfig
from .trainer import ABLATIONS, TrainConfig

# train fields that live in their own sections of the document
_FDA_KEYS = {"enabled": "fda_enabled", "epsilon": "fda_epsilon"}
_STDM_KEYS = {"enabled": "stdm_enabled", "p_time": "p_time", "p_lead": "p_lead", "k": "k",
              "uniform_mask_ratio": "uniform_mask_ratio"}
_SECTIONED = set(_FDA_KEYS.values()) | set(_STDM_KEYS.values())

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_BOOL = {"type": "boolean"}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}


def _obj(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


def _model_schema() -> dict:
    return _obj({f.name: {"type": "integer", "minimum": 1} for f in fields(ModelConfig)})


def _train_schema() -> dict:
    props = {
        "phase": {"enum": ["pretrain", "finetune"]},
        "epochs": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "weight_decay": {"type": "number", "minimum": 0},
        "warmup_epochs": {"type": "integer", "minimum": 0},
        "ema_momentum": _PROB,
        "tau": {"type": "number", "exclusiveMinimum": 0},
        "alpha": {"type": "number", "minimum": 0},
        "beta": {"type": "number", "minimum": 0},
        "seed": _INT,
        "ablation": {"enum": list(ABLATIONS)},
        "deterministic": _BOOL,
        "data_ratio": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "lead_subset": {"type": ["array", "null"], "items": {"type": "string"}, "minItems": 1},
        "crop_len": {"type": "integer", "minimum": 1},
        "keep_epoch_checkpoints": _BOOL,
    }
    missing = {f.name for f in fields(TrainConfig)} - set(props) - _SECTIONED
    assert not missing, missing
    return _obj(props)


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "core-ecg run configuration",
    **_obj({
        "data": _obj({
            "dir": {"type": "string"},
            "cache": {"type": "string"},
            "n_records": {"type": "integer", "minimum": 1},
            "seed": _INT,
            "fs": {"type": "number", "exclusiveMinimum": 0},
            "duration_s": {"type": "number", "exclusiveMinimum": 0},
            "class_mix": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 4, "maxItems": 4},
        }),
        "model": _model_schema(),
        "train": _train_schema(),
        "finetune": _train_schema(),
        "fda": _obj({"enabled": _BOOL, "epsilon": {"type": "number", "exclusiveMinimum": 0}}),
        "stdm": _obj({"enabled": _BOOL, "p_time": _PROB, "p_lead": _PROB, "k": {"type": "integer", "minimum": 0},
                      "uniform_mask_ratio": _PROB}),
        "output_dir": {"type": "string"},
    }),
}


class ConfigError(ValueError):
    """Schema or semantic violation; ``pointer`` is the JSON pointer of the offending value."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def validate(doc: dict) -> None:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(_pointer(e.absolute_path), e.message)


@dataclass
class RunConfig:
    data: dict = field(default_factory=dict)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(default_factory=TrainConfig.finetune_defaults)
    output_dir: str = "runs"
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        validate(doc)
        shared = {}
        for key, name in _FDA_KEYS.items():
            if key in doc.get("fda", {}):
                shared[name] = doc["fda"][key]
        for key, name in _STDM_KEYS.items():
            if key in doc.get("stdm", {}):
                shared[name] = doc["stdm"][key]
        try:
            model = ModelConfig(**doc.get("model", {}))
        except ValueError as exc:
            raise ConfigError("/model", str(exc)) from None
        try:
            train = TrainConfig(**{**doc.get("train", {}), **shared, "phase": "pretrain"})
        except ValueError as exc:
            raise ConfigError("/train", str(exc)) from None
        try:
            ft = TrainConfig.finetune_defaults(**{**doc.get("finetune", {}), "phase": "finetune"})
        except ValueError as exc:
            raise ConfigError("/finetune", str(exc)) from None
        return cls(doc.get("data", {}), model, train, ft, doc.get("output_dir", "runs"), doc)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("", f"config file {p} not found")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    return RunConfig.from_dict(doc)


def preset(name: str = "toy") -> dict:
    """A packaged configuration document (``toy``)."""
    return json.loads(resources.files("core_ecg.configs").joinpath(f"{name}.json").read_text())


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=2, sort_keys=True)
