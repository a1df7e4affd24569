"""Run configuration: one YAML file mirrored by nested dataclasses.

Unknown keys are rejected so typos fail before any work starts; every section
validates its own invariants via `RunConfig.validate()`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .contrastive import ConnectomeEncoderConfig, TrainerConfig
from .errors import ConfigError
from .fusion import SnfConfig
from .prototypes import ATTENTION_MODES
from .structure import EncoderConfig
from .subtypes import CONTROL_MODES
from .synth import SynthSpec
from .textview import PROVIDER_KINDS

VARIANT_NAMES = ("full", "s", "cl", "m", "t", "g")
GRAPH_SOURCES = ("learned_structure", "pcc")


@dataclass
class PathsConfig:
    manifest: str | None = None  # None -> synthesize a cohort from the synth section
    workdir: str = "work"
    roi_lookup: str | None = None


@dataclass
class StructureSection:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lambda_vc: float = 0.1
    steps: int = 200
    lr: float = 1e-3
    optimizer: str = "sgd"
    threads: int = 1

    def validate(self) -> None:
        self.encoder.validate()
        if self.lambda_vc < 0:
            raise ConfigError("structure.lambda_vc must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("structure.optimizer must be 'sgd' or 'adam'")
        if self.steps < 1 or self.threads < 1:
            raise ConfigError("structure.steps and structure.threads must be >= 1")


@dataclass
class TextSection:
    provider: str = "deterministic_stub"
    dim: int = 64
    seed: int = 0
    endpoint: str | None = None
    timeout: float = 10.0

    def validate(self) -> None:
        if self.provider not in PROVIDER_KINDS:
            raise ConfigError(f"text.provider must be one of {PROVIDER_KINDS}")
        if self.dim < 1:
            raise ConfigError("text.dim must be >= 1")
        if self.provider == "external" and not self.endpoint:
            raise ConfigError("text.endpoint required for the external provider")


@dataclass
class SubtypeSection:
    k: int = 3
    knn_k: int | None = None  # None -> ceil(log2 N_class)
    control_subtypes: str = "clustered"

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("subtype.k must be >= 1")
        if self.knn_k is not None and self.knn_k < 1:
            raise ConfigError("subtype.knn_k must be >= 1")
        if self.control_subtypes not in CONTROL_MODES:
            raise ConfigError(f"subtype.control_subtypes must be one of {CONTROL_MODES}")


@dataclass
class PrototypeSection:
    mode: str = "parameter_free"
    graph_source: str = "learned_structure"
    proj_dim: int = 32
    top_regions_n: int = 10

    def validate(self) -> None:
        if self.mode not in ATTENTION_MODES:
            raise ConfigError(f"prototype.mode must be one of {ATTENTION_MODES}")
        if self.graph_source not in GRAPH_SOURCES:
            raise ConfigError(f"prototype.graph_source must be one of {GRAPH_SOURCES}")
        if self.proj_dim < 1 or self.top_regions_n < 1:
            raise ConfigError("prototype.proj_dim and top_regions_n must be >= 1")


@dataclass
class EvalSection:
    folds: int = 5
    threshold: float = 0.5
    variant: str = "full"
    variants: tuple[str, ...] = ("s", "cl", "m", "t", "g", "full")
    k_sweep: tuple[int, ...] = (2, 3, 4)
    seeds: tuple[int, ...] = (0,)

    def validate(self) -> None:
        if self.folds < 2:
            raise ConfigError("eval.folds must be >= 2")
        if not (0.0 <= self.threshold <= 1.0):
            raise ConfigError("eval.threshold must lie in [0, 1]")
        for name in (self.variant, *self.variants):
            if name not in VARIANT_NAMES:
                raise ConfigError(f"unknown variant '{name}'")
        if any(k < 2 for k in self.k_sweep):
            raise ConfigError("eval.k_sweep entries must be >= 2")
        if not self.seeds:
            raise ConfigError("eval.seeds must not be empty")


@dataclass
class RunConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    structure: StructureSection = field(default_factory=StructureSection)
    text: TextSection = field(default_factory=TextSection)
    snf: SnfConfig = field(default_factory=SnfConfig)
    subtype: SubtypeSection = field(default_factory=SubtypeSection)
    prototype: PrototypeSection = field(default_factory=PrototypeSection)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def validate(self) -> None:
        for section in (self.structure, self.text, self.subtype, self.prototype,
                        self.eval, self.snf, self.trainer):
            section.validate()
        self.synth.validate()


_NESTED = {
    RunConfig: {
        "paths": PathsConfig, "structure": StructureSection, "text": TextSection,
        "snf": SnfConfig, "subtype": SubtypeSection, "prototype": PrototypeSection,
        "trainer": TrainerConfig, "eval": EvalSection, "synth": SynthSpec,
    },
    StructureSection: {"encoder": EncoderConfig},
    TrainerConfig: {"encoder": ConnectomeEncoderConfig},
}


def _build(cls, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{path or cls.__name__}' must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key '{path}{key}'")
        nested = _NESTED.get(cls, {}).get(key)
        if nested is not None:
            kwargs[key] = _build(nested, value or {}, path=f"{path}{key}.")
        else:
            default = names[key].default
            if isinstance(default, tuple) and isinstance(value, list):
                value = tuple(value)
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data or {})


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, list):
        return [_to_plain(v) for v in obj]
    return obj


def config_to_dict(config: RunConfig) -> dict:
    return _to_plain(config)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    config = config_from_dict(data or {})
    config.validate()
    return config


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)


def default_config_yaml() -> str:
    return dump_config(RunConfig())
