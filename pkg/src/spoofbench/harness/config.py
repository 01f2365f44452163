"""Declarative run configuration (YAML) and its canonical hash."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from ..dataio import DATA_ROOT_ENV, DatasetManifest, read_manifest
from ..errors import DataMissing, InvalidConfig, MissingFile
from ..features import FEATURE_KINDS, LENGTH_MODES
from ..models import MODEL_IDS
from ..training import TrainConfig


@dataclass
class DatasetSpec:
    name: str
    format: str  # asvspoof | itw
    protocol: str
    audio_root: str
    extension: str = ".flac"
    split: str | None = None
    asv_scores: str | None = None

    def resolve(self, data_root: Path) -> "DatasetSpec":
        def rel(p):
            return None if p is None else str(data_root / p)
        return DatasetSpec(self.name, self.format, rel(self.protocol), rel(self.audio_root),
                           self.extension, self.split, rel(self.asv_scores))

    def load(self) -> DatasetManifest:
        try:
            return read_manifest(self.format, self.protocol, self.audio_root, name=self.name,
                                 extension=self.extension, split=self.split)
        except MissingFile as exc:
            raise DataMissing(f"dataset {self.name}: {exc}") from exc


@dataclass
class ExperimentSpec:
    models: list[str]
    features: list[str]
    lengths: list[str] = field(default_factory=lambda: ["fixed4s", "full"])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    train_splits: list[str] = field(default_factory=lambda: ["train", "dev"])
    dev_dataset: str = "dev"
    eval_datasets: list[str] = field(default_factory=lambda: ["eval"])

    def __post_init__(self):
        bad = [m for m in self.models if m not in MODEL_IDS]
        bad += [f for f in self.features if f not in FEATURE_KINDS]
        bad += [n for n in self.lengths if n not in LENGTH_MODES]
        bad += [s for s in self.train_splits if s not in ("train", "dev", "eval")]
        if bad:
            raise InvalidConfig(f"unknown experiment values: {bad}")
        self.seeds = [int(s) for s in self.seeds]


@dataclass
class RunConfig:
    data_root: Path
    datasets: dict[str, DatasetSpec]
    experiment: ExperimentSpec
    training: TrainConfig
    document: dict[str, Any]

    @property
    def config_hash(self) -> str:
        return canonical_hash(self.document)

    def manifests_for_splits(self, splits) -> list[DatasetManifest]:
        chosen = [d for d in self.datasets.values() if d.format == "asvspoof"
                  and (d.split or d.name) in splits]
        if not chosen:
            raise InvalidConfig(f"no dataset provides splits {list(splits)}")
        return [d.load() for d in chosen]


def canonical_hash(document: dict[str, Any]) -> str:
    blob = json.dumps(document, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _build(cls, raw: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise InvalidConfig(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise InvalidConfig(f"{where}: {exc}") from exc


def parse_config(document: dict[str, Any], data_root: str | os.PathLike | None = None,
                 base_dir: str | os.PathLike = ".") -> RunConfig:
    if not isinstance(document, dict):
        raise InvalidConfig("config must be a mapping")
    root = data_root or document.get("data_root") or os.environ.get(DATA_ROOT_ENV)
    if root is None:
        raise InvalidConfig(f"no data_root in config, --data-root or ${DATA_ROOT_ENV}")
    root = Path(base_dir) / Path(root).expanduser()
    datasets = {}
    for name, raw in (document.get("datasets") or {}).items():
        spec = _build(DatasetSpec, {"name": name, **raw}, f"datasets.{name}")
        if spec.format not in ("asvspoof", "itw"):
            raise InvalidConfig(f"datasets.{name}: unknown format {spec.format!r}")
        datasets[name] = spec.resolve(root)
    if "experiment" not in document:
        raise InvalidConfig("config has no experiment section")
    experiment = _build(ExperimentSpec, dict(document["experiment"]), "experiment")
    for name in [experiment.dev_dataset, *experiment.eval_datasets]:
        if name not in datasets:
            raise InvalidConfig(f"experiment refers to undeclared dataset {name!r}")
    training_raw = dict(document.get("training") or {})
    training_raw.setdefault("train_splits", tuple(experiment.train_splits))
    training = _build(TrainConfig, training_raw, "training")
    return RunConfig(root, datasets, experiment, training, document)


def load_config(path: str | os.PathLike, data_root: str | os.PathLike | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        document = yaml.safe_load(fh)
    return parse_config(document, data_root, base_dir=path.parent)
