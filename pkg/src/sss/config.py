"""Run configuration: one JSON document covering every module, plus overrides."""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .ingest import PreprocessConfig, SynthConfig
from .pipeline import TrainConfig


@dataclass
class Seeds:
    data: int = 0
    init: int = 0
    sampler: int = 0


@dataclass
class HeatmapConfig:
    bin_width: Optional[int] = None
    raw: bool = False


_SYNTH_FIELDS = [f.name for f in dataclasses.fields(SynthConfig) if f.name != "seed"]
_TRAIN_FIELDS = [f.name for f in dataclasses.fields(TrainConfig) if f.name not in ("init_seed", "sampler_seed")]


def _build(cls, data, section, exclude=()):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)} - set(exclude)
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown config key {section}.{key}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {section!r}: {exc}") from exc


@dataclass
class RunConfig:
    dataset: Optional[str] = None
    out_dir: str = "run"
    seeds: Seeds = field(default_factory=Seeds)
    synth: dict = field(default_factory=dict)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    train: dict = field(default_factory=dict)
    heatmap: HeatmapConfig = field(default_factory=HeatmapConfig)

    TOP_KEYS = ("dataset", "out_dir", "seeds", "synth", "preprocess", "train", "heatmap")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        for key in data:
            if key not in cls.TOP_KEYS:
                raise ConfigError(f"unknown config key {key}")
        cfg = cls(
            dataset=data.get("dataset"),
            out_dir=data.get("out_dir", "run"),
            seeds=_build(Seeds, data.get("seeds"), "seeds"),
            synth=dict(data.get("synth") or {}),
            preprocess=_build(PreprocessConfig, data.get("preprocess"), "preprocess"),
            train=dict(data.get("train") or {}),
            heatmap=_build(HeatmapConfig, data.get("heatmap"), "heatmap"),
        )
        # validate eagerly so bad values fail before any work starts
        cfg.synth_config()
        cfg.train_config()
        return cfg

    def to_dict(self) -> dict:
        pre = dataclasses.asdict(self.preprocess)
        pre["split_fractions"] = list(pre["split_fractions"])
        return {
            "dataset": self.dataset,
            "out_dir": self.out_dir,
            "seeds": dataclasses.asdict(self.seeds),
            "synth": copy.deepcopy(self.synth),
            "preprocess": pre,
            "train": copy.deepcopy(self.train),
            "heatmap": dataclasses.asdict(self.heatmap),
        }

    def synth_config(self) -> SynthConfig:
        for key in self.synth:
            if key not in _SYNTH_FIELDS:
                raise ConfigError(f"unknown config key synth.{key}")
        return _build(SynthConfig, {**self.synth, "seed": self.seeds.data}, "synth")

    def train_config(self) -> TrainConfig:
        for key in self.train:
            if key not in _TRAIN_FIELDS:
                raise ConfigError(f"unknown config key train.{key}")
        return _build(TrainConfig, {**self.train, "init_seed": self.seeds.init,
                                    "sampler_seed": self.seeds.sampler}, "train")


def load_config(path=None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    for item in overrides:
        apply_override(data, item)
    return RunConfig.from_dict(data)


def apply_override(data: dict, item: str):
    """Apply ``a.b=value`` in place; the value is parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override inside non-object key {part!r}")
    node[parts[-1]] = value

