"""Configuration dataclasses, dataset presets and the run-config file loader."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError

SIDE_KINDS = ("none", "single", "multi")
MODELS = ("repeatnet", "srgnn")


@dataclass(frozen=True)
class ColumnMap:
    """Which input column feeds which event field.

    Columns are header names, or integer positions when the file has no header.
    """

    user: str | int = "user"
    timestamp: str | int = "timestamp"
    item: str | int = "item"
    side: str | int | None = "side"
    delimiter: str = ","
    has_header: bool = True
    side_separator: str = "|"
    timestamp_format: Optional[str] = None


@dataclass(frozen=True)
class DatasetProfile:
    name: str = "custom"
    session_duration: int = 8 * 3600
    session_length: int = 50
    min_item_count: int = 1
    side_kind: str = "single"

    def __post_init__(self):
        if self.session_length < 2:
            raise ConfigError(f"session_length must be >= 2, got {self.session_length}")
        if self.session_duration <= 0:
            raise ConfigError(f"session_duration must be > 0, got {self.session_duration}")
        if self.min_item_count < 1:
            raise ConfigError(f"min_item_count must be >= 1, got {self.min_item_count}")
        if self.side_kind not in SIDE_KINDS:
            raise ConfigError(f"side_kind must be one of {SIDE_KINDS}, got {self.side_kind!r}")


DAY = 24 * 3600

PROFILES = {
    "diginetica": DatasetProfile("diginetica", DAY, 50, 5, "single"),
    "lastfm": DatasetProfile("lastfm", 8 * 3600, 50, 1, "none"),
    "movielens": DatasetProfile("movielens", DAY, 50, 5, "multi"),
    "tafeng": DatasetProfile("tafeng", 14 * DAY, 40, 1, "single"),
}

COLUMN_PRESETS = {
    "diginetica": ColumnMap("sessionId", "timeframe", "itemId", "categoryId", delimiter=";"),
    "lastfm": ColumnMap(0, 1, 3, None, delimiter="\t", has_header=False,
                        timestamp_format="%Y-%m-%dT%H:%M:%SZ"),
    "movielens": ColumnMap("userId", "timestamp", "movieId", "genres"),
    "tafeng": ColumnMap("CUSTOMER_ID", "TRANSACTION_DT", "PRODUCT_ID", "PRODUCT_SUBCLASS",
                        timestamp_format="%m/%d/%Y"),
}


@dataclass
class TrainConfig:
    model: str = "repeatnet"
    use_side: bool = False
    embedding_dim: int = 100
    hidden_dim: Optional[int] = None
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    lr_halving_period: int = 5
    early_stop_patience: Optional[int] = 3
    attention_loss_weight: float = 0.0
    epochs: int = 30
    seed: int = 42
    ks: tuple = (10, 20)
    validation_fraction: float = 0.1
    propagation_steps: int = 1
    dtype: str = "float32"
    eval_batch_size: int = 512

    def __post_init__(self):
        self.ks = tuple(int(k) for k in self.ks)
        self.validate()

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.attention_loss_weight < 0:
            raise ConfigError("attention_loss_weight must be >= 0")
        if self.embedding_dim < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("embedding_dim and batch_size must be positive, epochs non-negative")
        if self.lr_halving_period < 1:
            raise ConfigError("lr_halving_period must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.propagation_steps < 1:
            raise ConfigError("propagation_steps must be >= 1")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError("ks must be a non-empty list of positive cutoffs")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @property
    def hidden(self) -> int:
        return self.hidden_dim or self.embedding_dim

    @classmethod
    def for_model(cls, model: str, **overrides) -> "TrainConfig":
        """Paper defaults for ``model`` with ``overrides`` applied on top."""
        if model == "srgnn":
            base = dict(batch_size=100, lr_halving_period=3, weight_decay=1e-5)
        else:
            base = {}
        base.update(overrides)
        return cls(model=model, **base)


@dataclass
class SynthConfig:
    n_items: int = 500
    n_categories: int = 20
    category_stickiness: float = 0.9
    repeat_prob: float = 0.2
    n_sessions: int = 5000
    session_len_range: tuple = (3, 10)
    seed: int = 0

    def __post_init__(self):
        self.session_len_range = tuple(int(x) for x in self.session_len_range)
        if not (0.0 <= self.category_stickiness <= 1.0 and 0.0 <= self.repeat_prob <= 1.0):
            raise ConfigError("category_stickiness and repeat_prob must lie in [0, 1]")
        if not self.n_items >= self.n_categories >= 1:
            raise ConfigError("need n_items >= n_categories >= 1")
        lo, hi = self.session_len_range
        if not 2 <= lo <= hi:
            raise ConfigError("session_len_range must satisfy 2 <= lo <= hi")
        if self.n_sessions < 1:
            raise ConfigError("n_sessions must be >= 1")


@dataclass
class RunConfig:
    profile: DatasetProfile = field(default_factory=DatasetProfile)
    columns: ColumnMap = field(default_factory=ColumnMap)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    test_fraction: float = 0.1
    split_seed: int = 42

    def to_dict(self) -> dict:
        out = {
            "dataset": dataclasses.asdict(self.profile),
            "columns": dataclasses.asdict(self.columns),
            "train": dataclasses.asdict(self.train),
            "synth": dataclasses.asdict(self.synth),
            "split": {"test_fraction": self.test_fraction, "seed": self.split_seed},
        }
        out["train"]["ks"] = list(self.train.ks)
        out["synth"]["session_len_range"] = list(self.synth.session_len_range)
        return out


def _build(cls, section: str, values: dict, base: dict | None = None):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    kwargs = dict(base or {})
    kwargs.update(values)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def _section(doc: dict, name: str) -> dict:
    value = doc.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"section [{name}] must be a mapping")
    return dict(value)


def parse_run_config(doc: dict | None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from a parsed document.

    ``overrides`` maps ``"section.key"`` to a value and beats the document.
    Unknown sections and keys raise ConfigError.
    """
    doc = dict(doc or {})
    allowed = {"dataset", "columns", "train", "synth", "split"}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    sections = {name: _section(doc, name) for name in allowed}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        sec, key = dotted.split(".", 1)
        sections[sec][key] = value

    dataset = sections["dataset"]
    preset = dataset.pop("preset", None)
    if preset is not None and preset not in PROFILES:
        raise ConfigError(f"unknown dataset preset {preset!r}; choose from {sorted(PROFILES)}")
    profile_base = dataclasses.asdict(PROFILES[preset]) if preset else {}
    columns_base = dataclasses.asdict(COLUMN_PRESETS[preset]) if preset else {}
    profile = _build(DatasetProfile, "dataset", dataset, profile_base)
    columns = _build(ColumnMap, "columns", sections["columns"], columns_base)

    train_values = sections["train"]
    model = train_values.pop("model", "repeatnet")
    if model not in MODELS:
        raise ConfigError(f"model must be one of {MODELS}, got {model!r}")
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(train_values) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in [train]: {', '.join(unknown)}")
    try:
        train = TrainConfig.for_model(model, **train_values)
    except TypeError as exc:
        raise ConfigError(f"[train]: {exc}") from exc

    synth = _build(SynthConfig, "synth", sections["synth"])
    split = sections["split"]
    unknown = sorted(set(split) - {"test_fraction", "seed"})
    if unknown:
        raise ConfigError(f"unknown key(s) in [split]: {', '.join(unknown)}")
    test_fraction = float(split.get("test_fraction", 0.1))
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("split.test_fraction must lie in (0, 1)")
    return RunConfig(profile, columns, train, synth, test_fraction, int(split.get("seed", 42)))


def load_run_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    if path is None:
        return parse_run_config({}, overrides)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must be a mapping of sections")
    return parse_run_config(doc, overrides)


def dump_run_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True), encoding="utf-8")
