"""Experiment configuration read from a TOML document.

Layout::

    name = "slp_baseline"
    protocol = "slp"            # slp | loso | random: picks depth and lr defaults
    output_dir = "runs"         # MASSCON_RUNS_DIR overrides it

    [dataset]   path, format, slp_cover, weight_column
    [split]     strategy + its parameters
    [preprocess] / [model] / [train]   fields of the matching config types

Relative dataset paths resolve against the config file's directory.
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import Dataset, FormatId, SplitSpec, SplitStrategy, load_dataset, split_loso, split_random_kfold, \
    split_weight_binned
from .errors import ConfigError
from .network import ModelConfig
from .preprocess import PreprocessConfig
from .training import BASE_LR, TrainConfig

RUNS_ENV = "MASSCON_RUNS_DIR"

# Sensing-layer depth chosen per protocol.
PROTOCOL_DEPTH = {"slp": 4, "loso": 8, "random": 6}


@dataclass
class SplitConfig:
    strategy: SplitStrategy = SplitStrategy.WEIGHT_BINNED
    seed: int = 0
    n_bins: int = 10
    n_val: int | None = None
    n_test: int | None = None
    held_subject: str | None = None
    k: int = 5
    fold: int = 0

    def __post_init__(self):
        try:
            self.strategy = SplitStrategy(self.strategy)
        except ValueError:
            raise ConfigError(f"unknown split strategy {self.strategy!r}") from None
        if self.strategy is SplitStrategy.LOSO and self.held_subject is None:
            raise ConfigError("split.held_subject is required for the loso strategy")
        if not 0 <= self.fold < self.k:
            raise ConfigError(f"split.fold must lie in [0, {self.k})")

    def apply(self, dataset: Dataset) -> SplitSpec:
        if self.strategy is SplitStrategy.WEIGHT_BINNED:
            return split_weight_binned(dataset, self.n_bins, self.seed, self.n_val, self.n_test)
        if self.strategy is SplitStrategy.LOSO:
            return split_loso(dataset, str(self.held_subject))
        return split_random_kfold(dataset, self.k, self.seed)[self.fold]


@dataclass
class DatasetConfig:
    path: Path
    format: FormatId
    slp_cover: str = "uncover"
    weight_column: int | None = None

    def load(self) -> Dataset:
        return load_dataset(self.path, self.format, slp_cover=self.slp_cover, weight_column=self.weight_column)


@dataclass
class ExperimentConfig:
    name: str
    dataset: DatasetConfig
    split: SplitConfig = field(default_factory=SplitConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: Path = Path("runs")
    protocol: str = "slp"
    source: Path | None = None

    @property
    def run_dir(self) -> Path:
        root = os.environ.get(RUNS_ENV)
        return (Path(root) if root else self.output_dir) / self.name

    def check_paths(self):
        if not self.dataset.path.exists():
            raise ConfigError(f"dataset path does not exist: {self.dataset.path}")

    def to_dict(self) -> dict:
        pre = dataclasses.asdict(self.preprocess)
        pre["normalization"] = self.preprocess.normalization.value
        split = dataclasses.asdict(self.split)
        split["strategy"] = self.split.strategy.value
        return {
            "name": self.name, "protocol": self.protocol, "output_dir": str(self.output_dir),
            "dataset": {"path": str(self.dataset.path), "format": self.dataset.format.value,
                        "slp_cover": self.dataset.slp_cover, "weight_column": self.dataset.weight_column},
            "split": split, "preprocess": pre, "model": self.model.to_dict(), "train": self.train.to_dict(),
        }


_TOP_KEYS = {"name", "protocol", "output_dir", "dataset", "split", "preprocess", "model", "train"}


def _section(doc, key, cls, defaults=None):
    raw = doc.get(key, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"[{key}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{key}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**{**(defaults or {}), **raw})
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{key}]: {exc}") from exc


def parse_config(doc: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    protocol = doc.get("protocol", "slp")
    if protocol not in PROTOCOL_DEPTH:
        raise ConfigError(f"protocol must be one of {sorted(PROTOCOL_DEPTH)}, got {protocol!r}")
    ds = doc.get("dataset")
    if not isinstance(ds, dict) or "path" not in ds or "format" not in ds:
        raise ConfigError("[dataset] needs 'path' and 'format'")
    ds = dict(ds)
    path = Path(ds.pop("path"))
    try:
        fmt = FormatId(ds.pop("format"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    extra = set(ds) - {"slp_cover", "weight_column"}
    if extra:
        raise ConfigError(f"unknown keys in [dataset]: {', '.join(sorted(extra))}")
    dataset = DatasetConfig(path if path.is_absolute() else base_dir / path, fmt, **ds)

    pre_default = {"upsample_factor": 1} if fmt is FormatId.SLP_PM else {}
    return ExperimentConfig(
        name=str(doc.get("name", "run")),
        dataset=dataset,
        split=_section(doc, "split", SplitConfig),
        preprocess=_section(doc, "preprocess", PreprocessConfig, pre_default),
        model=_section(doc, "model", ModelConfig, {"n_sensing_layers": PROTOCOL_DEPTH[protocol]}),
        train=_section(doc, "train", TrainConfig, {"base_lr": BASE_LR[protocol]}),
        output_dir=Path(doc.get("output_dir", "runs")),
        protocol=protocol,
    )


def load_config(path) -> ExperimentConfig:
    """Read and validate a TOML experiment file. A missing file raises FileNotFoundError."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = parse_config(doc, path.parent)
    cfg.source = path
    return cfg
