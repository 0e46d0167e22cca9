"""Run configuration: every knob of one experiment in a single INI document.

Sections mirror the module configs. Values are written as JSON literals so
numbers, booleans, ``null`` and lists survive a round trip unchanged.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .augment import AugmentConfig
from .evaluation import ExperimentSpec, canonical_variant
from .losses import CondDistConfig, LossWeights
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSection:
    dataset: str = "MUTAG"
    data_root: str = ""
    variants: tuple = ("SSCDL",)
    label_ratios: tuple = (0.3,)
    fold_count: int = 10
    folds: Optional[tuple] = None
    base_seed: int = 0

    def __post_init__(self):
        try:
            variants = tuple(canonical_variant(v) for v in self.variants)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not variants:
            raise ConfigError("at least one variant is required")
        object.__setattr__(self, "variants", variants)
        object.__setattr__(self, "label_ratios", tuple(float(r) for r in self.label_ratios))
        if not self.label_ratios or not all(0 < r <= 1 for r in self.label_ratios):
            raise ConfigError(f"label ratios must lie in (0, 1], got {self.label_ratios}")
        if self.fold_count < 2:
            raise ConfigError("fold_count must be at least 2")
        if self.folds is not None:
            object.__setattr__(self, "folds", tuple(int(f) for f in self.folds))

    def spec(self) -> ExperimentSpec:
        return ExperimentSpec(
            self.dataset, self.label_ratios, self.fold_count, self.variants, self.base_seed,
            self.data_root or None, self.folds,
        )


SWEEP_KINDS = ("none", "mask", "alpha_beta")


@dataclass(frozen=True)
class SweepSection:
    kind: str = "none"
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ConfigError(f"sweep kind must be one of {SWEEP_KINDS}")


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepSection = field(default_factory=SweepSection)

    def sections(self) -> dict:
        t = self.train.to_dict()
        train = {k: v for k, v in t.items() if k not in ("weights", "cond_dist", "augment")}
        return {
            "experiment": asdict(self.experiment),
            "model": asdict(self.model),
            "train": train,
            "loss": asdict(self.train.weights),
            "cond_dist": asdict(self.train.cond_dist),
            "augment": asdict(self.train.augment),
            "sweep": asdict(self.sweep),
        }

    def canonical(self) -> str:
        return json.dumps(self.sections(), sort_keys=True, separators=(",", ":"))

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for name, values in self.sections().items():
            cp[name] = {k: json.dumps(_plain(v)) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ini())
        return path


def _plain(v):
    if isinstance(v, (tuple, frozenset, set)):
        return sorted(v) if isinstance(v, (set, frozenset)) else list(v)
    return v


_SECTIONS = {
    "experiment": ExperimentSection,
    "model": ModelConfig,
    "train": TrainConfig,
    "loss": LossWeights,
    "cond_dist": CondDistConfig,
    "augment": AugmentConfig,
    "sweep": SweepSection,
}
_NESTED = ("weights", "cond_dist", "augment")


def _parse_value(raw: str, where: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw  # bare strings such as dataset = MUTAG


def _coerce(cls, name: str, value, where: str):
    default = {f.name: f for f in fields(cls)}[name].default
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, (tuple, frozenset)) or name == "folds":
        if isinstance(value, (str, int, float)):
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return frozenset(value) if isinstance(default, frozenset) else tuple(value)
    if isinstance(default, str):
        return str(value)
    return value


def _build(raw: dict) -> RunConfig:
    parts = {}
    for section, cls in _SECTIONS.items():
        known = {f.name for f in fields(cls)} - (set(_NESTED) if cls is TrainConfig else set())
        values = raw.get(section, {})
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
        kw = {k: _coerce(cls, k, v, f"[{section}] {k}") for k, v in values.items()}
        parts[section] = kw
    unknown_sections = set(raw) - set(_SECTIONS)
    if unknown_sections:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown_sections))}")
    try:
        train = TrainConfig(
            **parts["train"],
            weights=LossWeights(**parts["loss"]),
            cond_dist=CondDistConfig(**parts["cond_dist"]),
            augment=AugmentConfig(**parts["augment"]),
        )
        exp = ExperimentSection(**parts["experiment"])
        return RunConfig(exp, ModelConfig(**parts["model"]), train, SweepSection(**parts["sweep"]))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_ini(text: str) -> dict:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return {s: {k: _parse_value(v, f"[{s}] {k}") for k, v in cp[s].items()} for s in cp.sections()}


def from_ini(text: str, overrides: Optional[dict] = None) -> RunConfig:
    """Parse a config document; ``overrides`` maps ``"section.key"`` to a value."""
    raw = parse_ini(text)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        raw.setdefault(section, {})[key] = value
    return _build(raw)


def load(path=None, overrides: Optional[dict] = None) -> RunConfig:
    text = ""
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
    return from_ini(text, overrides)


def parse_override(item: str) -> tuple[str, object]:
    """``"train.learning_rate=0.01"`` -> ``("train.learning_rate", 0.01)``."""
    key, sep, raw = item.partition("=")
    if not sep:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    return key.strip(), _parse_value(raw.strip(), key)


def with_experiment(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, experiment=replace(cfg.experiment, **kw))


def with_sweep(cfg: RunConfig, kind: str, values) -> RunConfig:
    return replace(cfg, sweep=SweepSection(kind, tuple(float(v) for v in values)))
