"""Run configuration: YAML file + ``--set section.key=value`` overrides.

Example file::

    labeling: {threshold_fraction: 0.85, min_blob_area: 200}
    dataset:  {seq_len: 20, test_fraction: 0.3, seed: 0}
    model:    {backbone: efficientnet_b0, attention: scse, pretrained: true}
    encoder:  {freeze: false}
    train:    {lr_init: 0.01, epochs: 300, batch_size: 5}
    infer:    {stride: 1, binarize_threshold: 0.5}
    eval:     {overlap: 0.3, normalizer: gt, split: test}
    run_id: my-run

Every key is optional; unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Union

import yaml

from .clips import IngestConfig
from .errors import ConfigError
from .evaluation import EvalConfig
from .inference import InferenceConfig
from .ir_labeling import LabelingConfig
from .models import BackboneSpec, DecoderConfig
from .training import TrainConfig

RUNS_ENV = "SMOLDER_RUNS_DIR"


@dataclass(frozen=True)
class DatasetConfig:
    seq_len: int = 20
    test_fraction: float = 0.3
    seed: int = 0
    policy: Literal["crop", "resize"] = "crop"

    def __post_init__(self):
        if self.seq_len < 1:
            raise ConfigError("dataset.seq_len must be >= 1")
        if not 0 < self.test_fraction < 1:
            raise ConfigError(f"dataset.test_fraction must be in (0, 1), got {self.test_fraction}")
        IngestConfig(policy=self.policy)


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "vgg16"
    attention: str = "scse"
    pretrained: bool = True
    weights_path: str | None = None
    n_classes: int = 1
    seq_len: int | None = None  # defaults to dataset.seq_len
    part1_channels: tuple[int, ...] | None = None
    time_kernel: int = 4
    n_time_blocks: int = 6


@dataclass(frozen=True)
class EncoderConfig:
    freeze: bool = False


@dataclass(frozen=True)
class InferSection:
    window: int | None = None  # defaults to the model's seq_len
    stride: int = 1
    binarize_threshold: float = 0.5
    device: str = "cpu"
    batch_size: int = 1
    overlay: bool = False


@dataclass(frozen=True)
class EvalSection:
    overlap: float = 0.30
    normalizer: str = "gt"
    split: str = "test"
    overlay: bool = False

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ConfigError(f"eval.split must be 'train' or 'test', got {self.split!r}")


@dataclass(frozen=True)
class PathsConfig:
    runs_dir: str = "runs"


SECTIONS = {
    "labeling": LabelingConfig,
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "encoder": EncoderConfig,
    "train": TrainConfig,
    "infer": InferSection,
    "eval": EvalSection,
    "paths": PathsConfig,
}


@dataclass
class RunConfig:
    labeling: LabelingConfig = field(default_factory=LabelingConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferSection = field(default_factory=InferSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsConfig = field(default_factory=PathsConfig)
    run_id: str | None = None
    explicit: frozenset = field(default_factory=frozenset, repr=False)

    # -- derived stage configs --------------------------------------------

    @property
    def seq_len(self) -> int:
        return self.model.seq_len or self.dataset.seq_len

    def backbone_spec(self) -> BackboneSpec:
        return BackboneSpec(
            family=self.model.backbone,
            pretrained=self.model.pretrained,
            weights_path=self.model.weights_path,
            freeze=self.encoder.freeze,
        )

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            attention=self.model.attention,
            n_classes=self.model.n_classes,
            part1_channels=self.model.part1_channels,
            time_kernel=self.model.time_kernel,
            n_time_blocks=self.model.n_time_blocks,
            seq_len=self.seq_len,
        )

    def inference_config(self, seq_len: int | None = None) -> InferenceConfig:
        i = self.infer
        return InferenceConfig(
            window=i.window or seq_len or self.seq_len,
            stride=i.stride,
            binarize_threshold=i.binarize_threshold,
            device=i.device,
            batch_size=i.batch_size,
        )

    def eval_config(self) -> EvalConfig:
        return EvalConfig(overlap=self.eval.overlap, normalizer=self.eval.normalizer)

    def runs_root(self) -> Path:
        return Path(os.environ.get(RUNS_ENV) or self.paths.runs_dir)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        out = {name: _plain(dataclasses.asdict(getattr(self, name))) for name in SECTIONS}
        out["run_id"] = self.run_id
        return out

    def hash(self) -> str:
        """Digest of everything that affects results (run id and paths excluded)."""
        d = self.to_dict()
        d.pop("run_id")
        d.pop("paths")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def dump(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _describe(tp) -> str:
    origin = typing.get_origin(tp)
    if origin is types.UnionType:
        origin = Union
    if origin is Literal:
        return " | ".join(repr(a) for a in typing.get_args(tp))
    if origin in (Union, types.UnionType):
        return " or ".join(_describe(a) for a in typing.get_args(tp))
    if origin is tuple:
        return "list of integers"
    return getattr(tp, "__name__", str(tp))


def _coerce(key: str, value: Any, tp):
    origin = typing.get_origin(tp)
    if origin in (Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None or (isinstance(value, str) and value.lower() in ("null", "none", "~")):
            if type(None) in args:
                return None
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _coerce(key, value, arg)
            except ConfigError:
                pass
        raise ConfigError(f"{key}: expected {_describe(tp)}, got {value!r}")
    if origin is Literal:
        if value not in typing.get_args(tp):
            raise ConfigError(f"{key}: expected one of {_describe(tp)}, got {value!r}")
        return value
    if origin is tuple:
        if isinstance(value, str):
            value = yaml.safe_load(value)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list of integers, got {value!r}")
        return tuple(_coerce(key, v, int) for v in value)
    if tp is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "yes", "1", "false", "no", "0"):
            return value.lower() in ("true", "yes", "1")
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if tp is str:
        if isinstance(value, (dict, list)):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return str(value)
    raise ConfigError(f"{key}: unsupported type {tp}")


def _build_section(name: str, values: dict):
    cls = SECTIONS[name]
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {name}.{key} (valid: {', '.join(sorted(known))})")
        kwargs[key] = _coerce(f"{name}.{key}", value, hints[key])
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _parse_override(item: str) -> tuple[str, str, Any]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    path, raw = item.split("=", 1)
    if path == "run_id":
        return "", "run_id", raw
    if "." not in path:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    section, key = path.split(".", 1)
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section {section!r} (valid: {', '.join(SECTIONS)})")
    value = yaml.safe_load(raw) if raw.strip() else ""
    return section, key, value


def parse_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults <- YAML file <- overrides, validated before anything runs."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping of sections")
        data = loaded
    raw: dict[str, dict] = {name: {} for name in SECTIONS}
    run_id = None
    for name, body in data.items():
        if name == "run_id":
            run_id = None if body is None else str(body)
            continue
        if name not in SECTIONS:
            raise ConfigError(f"unknown config section {name!r} (valid: {', '.join(SECTIONS)}, run_id)")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        raw[name].update(body)
    for item in overrides or []:
        section, key, value = _parse_override(item)
        if section == "":
            run_id = value
        else:
            raw[section][key] = value
    sections = {name: _build_section(name, values) for name, values in raw.items()}
    explicit = frozenset(f"{s}.{k}" for s, vals in raw.items() for k in vals)
    cfg = RunConfig(**sections, run_id=run_id, explicit=explicit)
    if cfg.model.seq_len is not None and cfg.model.seq_len != cfg.dataset.seq_len:
        raise ConfigError(
            f"model.seq_len ({cfg.model.seq_len}) must equal dataset.seq_len ({cfg.dataset.seq_len})"
        )
    # cross-section checks: constructing these validates them
    cfg.backbone_spec()
    cfg.decoder_config()
    cfg.inference_config()
    cfg.eval_config()
    return cfg
