"""Flat ``section.key = value`` experiment configs.

One file fully determines a run. Blank lines and ``#`` comments are ignored;
every key must be known, and unknown or malformed entries raise
:class:`~fedcast.errors.ConfigError` naming the key. Example::

    master_seed = 3
    partition.strategy = s3
    partition.n_clients = 20
    strategy.kind = fedprox
    strategy.alpha = 0.1
    data.icg.beat_rate_hz = 1.8
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import ConfigError, FedcastError, ParameterRangeError
from .federation import StrategyConfig, StrategyKind, WeightMode
from .forecaster import ModelConfig
from .partitioning import PartitionSpec, PartitionStrategy
from .signals import Morphology
from .tokenizer import TokenizerConfig


@dataclass(frozen=True)
class PretrainSettings:
    steps: int = 4000
    eta: float = 0.5
    mixture_seed: int = 0
    batch_size: int = 16


@dataclass(frozen=True)
class DataSettings:
    """Where client series come from: synthetic generators or CSV files."""

    source: str = "synthetic"
    n_subjects: int = 30
    n_icg_subjects: int = 2
    n_samples: int = 1024
    # per-subject beat rates are drawn uniformly from these ranges
    ecg_rate_low: float = 0.9
    ecg_rate_high: float = 1.5
    icg_rate_low: float = 1.6
    icg_rate_high: float = 2.0
    ecg: Morphology = Morphology()
    icg: Morphology = Morphology(amplitude=0.5, baseline=0.4)
    site_size_low: int = 10
    site_size_high: int = 200
    ecg_files: tuple[str, ...] = ()
    icg_files: tuple[str, ...] = ()
    csv_sample_rate_hz: float = 500.0


@dataclass(frozen=True)
class ExperimentConfig:
    partition: PartitionSpec = PartitionSpec()
    strategy: StrategyConfig = StrategyConfig()
    model: ModelConfig = ModelConfig()
    tokenizer: TokenizerConfig = TokenizerConfig()
    pretrain: PretrainSettings = PretrainSettings()
    data: DataSettings = DataSettings()
    master_seed: int = 0
    output_dir: str = "out"

    def validate(self) -> None:
        self.model.check_tokenizer(self.tokenizer)
        if self.model.receptive > self.partition.l_ctx:
            raise ConfigError("model.receptive", "must not exceed partition.l_ctx")
        if self.data.source not in ("synthetic", "csv"):
            raise ConfigError("data.source", "must be 'synthetic' or 'csv'")
        for name in ("ecg", "icg"):
            try:
                getattr(self.data, name).validate()
            except ParameterRangeError as exc:
                raise ConfigError(f"data.{name}", str(exc)) from None


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean")


def _coerce(text: str, annotation: str, current: Any):
    if current is None or isinstance(current, tuple):
        if text.lower() in ("", "none"):
            return None if current is None else ()
        if "tuple[int" in annotation:
            return tuple(int(v) for v in text.split(","))
        if "tuple[str" in annotation:
            return tuple(v.strip() for v in text.split(",") if v.strip())
        if "int" in annotation:
            return int(text)
        return text
    if isinstance(current, bool):
        return _parse_bool(text)
    if isinstance(current, StrategyKind):
        return StrategyKind.parse(text)
    if isinstance(current, PartitionStrategy):
        return PartitionStrategy.parse(text)
    if isinstance(current, WeightMode):
        return WeightMode(text.lower())
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    return text


# Nested configs are edited as ``{"__cls__": cls, field: value-or-subtree}``
# dicts and only instantiated (and validated) once every key is applied.

def _shadow(obj) -> dict:
    tree: dict = {"__cls__": type(obj)}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        tree[f.name] = _shadow(v) if dataclasses.is_dataclass(v) else v
    return tree


def _materialize(tree: dict):
    cls = tree["__cls__"]
    return cls(**{k: _materialize(v) if isinstance(v, dict) else v
                  for k, v in tree.items() if k != "__cls__"})


_ALIASES = {"lambda": "lam", "R": "rounds", "R_g": "global_rounds"}


def _assign(tree: dict, key: str, text: str) -> None:
    parts = key.split(".")
    node = tree
    for depth, part in enumerate(parts):
        part = _ALIASES.get(part, part)
        if part == "__cls__" or part not in node:
            raise ConfigError(key, "unknown key")
        if depth < len(parts) - 1:
            if not isinstance(node[part], dict):
                raise ConfigError(key, "unknown key")
            node = node[part]
            continue
        if isinstance(node[part], dict):
            raise ConfigError(key, "names a section, not a value")
        annotation = str(next(f.type for f in dataclasses.fields(node["__cls__"])
                              if f.name == part))
        try:
            node[part] = _coerce(text.strip(), annotation, node[part])
        except ValueError:
            raise ConfigError(key, f"cannot parse value {text.strip()!r}") from None


def _blame(message: str, keys: list[str]) -> str:
    for key in reversed(keys):
        leaf = _ALIASES.get(key.rsplit(".", 1)[-1], key.rsplit(".", 1)[-1])
        if leaf in message:
            return key
    return keys[-1] if keys else "<config>"


def parse_config(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    entries: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not of the form key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        entries.append((key, value))
    entries.extend((overrides or {}).items())

    tree = _shadow(ExperimentConfig())
    for key, value in entries:
        _assign(tree, key, value)
    try:
        cfg = _materialize(tree)
        cfg.validate()
    except ConfigError:
        raise
    except (FedcastError, TypeError) as exc:
        raise ConfigError(_blame(str(exc), [k for k, _ in entries]), str(exc)) from None
    return cfg


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config file ({exc.strerror})") from None
    return parse_config(text, overrides)
