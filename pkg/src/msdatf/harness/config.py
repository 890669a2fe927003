"""Run configuration files.

A config is YAML (or JSON) with optional sections mirroring the dataclasses::

    generator: {depth: 2, embed_dim: 16, ...}     # GeneratorConfig
    train:     {lam: 0.5, P: 2, K: 4, ...}        # TrainConfig
    synth:     {n_subjects: 5, shift: 1.0, ...}   # SynthCohortConfig
    experiment: {normalization: subject, window: 9, target_split: 0.2}
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from ..errors import ConfigError
from ..features import SynthCohortConfig
from ..generator import GeneratorConfig
from ..msda import TrainConfig


@dataclass
class ExperimentConfig:
    normalization: str = "subject"
    window: int = 9
    group_sizes: list | None = None
    target_split: float = 0.2

    def __post_init__(self):
        if self.normalization not in ("subject", "global", "none"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if not 0.0 < self.target_split < 1.0:
            raise ConfigError("target_split must be in (0, 1)")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthCohortConfig = field(default_factory=SynthCohortConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def to_dict(self):
        synth = {f.name: getattr(self.synth, f.name) for f in fields(self.synth) if f.name != "extra"}
        return {
            "generator": self.generator.to_dict(),
            "train": self.train.to_dict(),
            "synth": synth,
            "experiment": self.experiment.to_dict(),
        }


def _build(cls, section, data):
    data = dict(data or {})
    known = {f.name for f in fields(cls)} - {"extra"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def config_from_dict(data, seed=None) -> RunConfig:
    data = dict(data or {})
    unknown = set(data) - {"generator", "train", "synth", "experiment"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    train = dict(data.get("train") or {})
    synth = dict(data.get("synth") or {})
    if seed is not None:
        train["seed"] = seed
        synth["seed"] = seed
    return RunConfig(
        generator=_build(GeneratorConfig, "generator", data.get("generator")),
        train=_build(TrainConfig, "train", train),
        synth=_build(SynthCohortConfig, "synth", synth),
        experiment=_build(ExperimentConfig, "experiment", data.get("experiment")),
    )


def load_config(path=None, seed=None) -> RunConfig:
    if path is None:
        return config_from_dict({}, seed)
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data, seed)
