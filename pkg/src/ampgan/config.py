"""Run configuration: one YAML document with a section per component.

Values resolve as command-line overrides > config file > defaults. Unknown
keys are rejected with the closest valid spelling.
"""

from __future__ import annotations

import difflib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .generator import GeneratorConfig
from .losses import MelConfig
from .trainer import TrainConfig


@dataclass
class DataConfig:
    manifest: str = ""  # CSV manifest (raw files for normalize, cache files otherwise)
    cache_dir: str = "cache"
    tone_label: str = ""  # target tone; empty means the only tone in the manifest
    extra_clean_tones: list = field(default_factory=list)  # merged when clean_pool_spec=both
    split_ratios: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    split_seed: int = 0
    peak_db: float = -1.0
    target_lufs: float = -12.0


@dataclass
class OutputConfig:
    run_dir: str = "runs/default"
    resume: str = ""  # checkpoint to continue from


@dataclass
class RenderConfig:
    checkpoint: str = ""
    input: str = ""
    output: str = ""
    chunk_size: int = 65536


@dataclass
class EvalConfig:
    checkpoint: str = ""
    manifest: str = ""  # defaults to data.manifest
    split: str = "test"  # test | val | train | all
    embedder: str = ""  # "" (no FAD) or "logmel"
    embedder_window: int = 16384  # samples per embedding
    esr_preemphasis: bool = True
    report: str = ""  # defaults to <run_dir>/eval.json


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mel: MelConfig = field(default_factory=MelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {f.name: asdict(getattr(self, f.name)) for f in fields(self)}

    def dump(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path


SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def _nearest(key: str, valid) -> str:
    match = difflib.get_close_matches(key, list(valid), n=1, cutoff=0.0)
    return match[0] if match else ""


def _unknown(where: str, key: str, valid) -> ConfigError:
    hint = _nearest(key, valid)
    return ConfigError(f"unknown config key '{where}{key}'; did you mean '{where}{hint}'?")


def _coerce(value, default, name):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{name}: expected true/false, got {value!r}")
    if isinstance(default, int) and not isinstance(value, bool):
        if isinstance(value, int) or (isinstance(value, float) and value.is_integer()):
            return int(value)
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str):
            # YAML 1.1 reads "1e-3" (no decimal point) as a string
            try:
                return float(value)
            except ValueError:
                pass
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
        if value is None:
            return ""
    elif isinstance(default, list):
        if isinstance(value, (list, tuple)):
            return list(value)
    elif default is None:
        return value
    raise ConfigError(f"{name}: expected {type(default).__name__}, got {value!r}")


def _merge(tree: dict, updates: dict, source: str):
    """Fold ``updates`` into ``tree``, which holds only explicitly set keys."""
    defaults = RunConfig().to_dict()
    for section, values in updates.items():
        if section not in SECTIONS:
            raise _unknown("", section, SECTIONS)
        if not isinstance(values, dict):
            raise ConfigError(f"{source}: section {section!r} must be a mapping")
        valid = defaults[section]
        for key, value in values.items():
            if key not in valid:
                raise _unknown(f"{section}.", key, valid)
            tree.setdefault(section, {})[key] = value


def parse_override(text: str) -> dict:
    """``section.key=value`` with a YAML-typed value."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    path, raw = text.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override key {path!r} must be section.key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from exc
    return {parts[0]: {parts[1]: value}}


def load_config(path=None, overrides=()) -> RunConfig:
    """Resolve a :class:`RunConfig` from defaults, an optional YAML file and overrides."""
    # defaults are applied by the dataclasses, so mode-dependent ones resolve late
    tree: dict = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping of sections")
        _merge(tree, doc, str(path))
    for text in overrides:
        _merge(tree, parse_override(text), "override")
    return build_config(tree)


def build_config(tree: dict) -> RunConfig:
    base = RunConfig()
    sections: dict[str, Any] = {}
    for name in SECTIONS:
        ref = getattr(base, name)
        values = tree.get(name, {})
        kwargs = {}
        for f in fields(ref):
            if f.name in values:
                kwargs[f.name] = _coerce(values[f.name], getattr(ref, f.name), f"{name}.{f.name}")
        obj = type(ref)(**kwargs)
        sections[name] = obj
    cfg = RunConfig(**sections)
    try:
        cfg.generator.validate()
        cfg.mel.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.train.validate()
    if cfg.eval.split not in ("train", "val", "test", "all"):
        raise ConfigError(f"eval.split must be train, val, test or all, got {cfg.eval.split!r}")
    if cfg.eval.embedder not in ("", "logmel"):
        raise ConfigError(f"eval.embedder must be empty or 'logmel', got {cfg.eval.embedder!r}")
    if cfg.eval.embedder_window <= 0:
        raise ConfigError("eval.embedder_window must be positive")
    if len(cfg.data.split_ratios) != 3:
        raise ConfigError("data.split_ratios needs three values (train, val, test)")
    return cfg


def default_table() -> list[tuple[str, Any]]:
    """Flat ``(section.key, default)`` listing, used for documentation."""
    out = []
    for name, section in RunConfig().to_dict().items():
        for key, value in section.items():
            out.append((f"{name}.{key}", value))
    return out
