"""Run configuration: a flat ``key = value`` file whose keys double as CLI flags."""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigurationError
from .model import ModelConfig

DATA_ROOT_ENV = "HELPFULNESS_DATA_ROOT"


def data_root() -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, "."))


@dataclass
class RunConfig:
    # paths
    corpus: str = ""
    corpus_category: str = "unknown"
    embeddings: str = ""
    annotated: str = ""
    data_dir: str = ""
    out_dir: str = ""
    # model
    dim: int = 100
    heads: int = 2
    j: float = 1000.0
    channels: int = 64
    filters: tuple = (1, 2, 3)
    dropout: float = 0.5
    max_len: int = 400
    scale_dim: str = "d_k"
    variant: str = "full_max"
    trainable_embeddings: bool = True
    # training
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    train_category: str = ""
    # data
    vote_threshold: int = 5
    min_words: int = 7
    min_count: int = 2
    split: tuple = (0.7, 0.2, 0.1)

    explicit: set = field(default_factory=set, repr=False, compare=False)

    def __post_init__(self) -> None:
        root = data_root()
        if not self.data_dir:
            self.data_dir = str(root / "dataset")
        if not self.out_dir:
            self.out_dir = str(root / "run")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("explicit")
        d["filters"] = list(self.filters)
        d["split"] = list(self.split)
        return d

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, dim=self.dim, heads=self.heads, j=self.j,
                           channels=self.channels, filters=tuple(self.filters), dropout=self.dropout,
                           variant=self.variant, scale_dim=self.scale_dim, max_len=self.max_len,
                           trainable_embeddings=self.trainable_embeddings, seed=self.seed)

    def write(self, path) -> None:
        lines = [f"{k} = {_format(v)}" for k, v in self.to_dict().items()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


CONFIG_KEYS = [f.name for f in fields(RunConfig) if f.name != "explicit"]
_TYPES = {f.name: type(f.default) for f in fields(RunConfig) if f.name != "explicit"}


def _format(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value).lower() if isinstance(value, bool) else str(value)


def coerce(key: str, raw: str) -> Any:
    """Parse a textual value for ``key`` into the field's type."""
    if key not in CONFIG_KEYS:
        raise ConfigurationError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    text = raw.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            item = int if key == "filters" else float
            return tuple(item(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
    return text


def read_config_file(path) -> dict[str, Any]:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    try:
        parser.read_string("[run]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return {k: coerce(k, v) for k, v in parser["run"].items()}


def build_config(path=None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Defaults, then the config file, then command-line overrides."""
    values: dict[str, Any] = {}
    if path:
        values.update(read_config_file(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = RunConfig(**values)
    cfg.explicit = set(values)
    return cfg
