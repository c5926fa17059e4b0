"""Experiment configuration: TOML file format, defaults, validation.

Every tunable has a named key; file values override the defaults here,
and CLI flags override the file. The resolved configuration is written
into the run manifest so any output directory is self-describing.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .consensus import PowlsConfig
from .fl import SYNTHETIC, TINY_CLASSIFIER, DataConfig
from .incentives import CreditConfig
from .netsim import TopologyConfig

POWLS = "powls"
POS = "pos"


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    kind: str = SYNTHETIC
    local_epochs: int = 5
    learning_rate: float = 0.01
    batch_size: int = 10
    params_length: int = 64  # synthetic model size
    perturbation_scale: float = 0.01
    accuracy_base: float = 0.95
    accuracy_jitter: float = 0.01
    node_accuracy: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (SYNTHETIC, TINY_CLASSIFIER):
            raise ConfigError(f"unknown trainer kind {self.kind!r}")
        if self.params_length < 0:
            raise ConfigError("params_length must be non-negative")


@dataclass(frozen=True)
class IncentiveConfig:
    t_acc: float = 0.01
    tr_total: float = 20.0

    def __post_init__(self):
        if self.t_acc < 0:
            raise ConfigError("t_acc must be non-negative")
        if self.tr_total < 0:
            raise ConfigError("tr_total must be non-negative")


@dataclass(frozen=True)
class NetworkConfig:
    payload_override: int = 0  # 0 = use real sealed sizes
    include_receiver_td: bool = True

    def __post_init__(self):
        if self.payload_override < 0:
            raise ConfigError("payload_override must be non-negative")


@dataclass(frozen=True)
class FaultConfig:
    tamper: tuple[str, ...] = ()  # "round:sender:field"
    drop: tuple[str, ...] = ()  # "round:sender"


@dataclass(frozen=True)
class ExperimentConfig:
    rounds: int = 100
    seed: int = 42
    consensus: str = POWLS
    out_dir: str = "out"
    reselect_every: int = 0  # recompute the package list every N rounds; 0 = once
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    powls: PowlsConfig = field(default_factory=PowlsConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    credit: CreditConfig = field(default_factory=CreditConfig)
    incentive: IncentiveConfig = field(default_factory=IncentiveConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    faults: FaultConfig = field(default_factory=FaultConfig)

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.consensus not in (POWLS, POS):
            raise ConfigError(f"consensus must be {POWLS!r} or {POS!r}")
        if self.reselect_every < 0:
            raise ConfigError("reselect_every must be non-negative")
        non_lt = self.topology.total_nodes - len(self.topology.lt_ids)
        if self.powls.tau > non_lt:
            raise ConfigError(
                f"tau={self.powls.tau} but only {non_lt} non-training nodes exist"
            )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _build(cls, section: Mapping[str, Any], name: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - fields
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [{name}] section: {exc}") from exc


def config_from_dict(raw: Mapping[str, Any]) -> ExperimentConfig:
    raw = dict(raw)
    run = dict(raw.pop("run", {}))
    sections: dict[str, Any] = {}

    def take(name: str, cls, transform=None):
        if name in raw:
            data = dict(raw.pop(name))
            if transform:
                data = transform(data)
            sections[name] = _build(cls, data, name)

    def fix_topology(data):
        if "lt_ids" in data:
            data["lt_ids"] = tuple(data["lt_ids"])
        if "td_range" in data:
            data["td_range"] = tuple(data["td_range"])
        return data

    def fix_trainer(data):
        if "node_accuracy" in data:
            data["node_accuracy"] = {
                int(k): float(v) for k, v in data["node_accuracy"].items()
            }
        return data

    def fix_faults(data):
        for key in ("tamper", "drop"):
            if key in data:
                data[key] = tuple(data[key])
        return data

    take("topology", TopologyConfig, fix_topology)
    # [consensus] mixes selector weights with runner knobs; split them here
    if "consensus" in raw:
        section = dict(raw.pop("consensus"))
        if "mode" in section:
            run.setdefault("consensus", section.pop("mode"))
        if "reselect_every" in section:
            run.setdefault("reselect_every", section.pop("reselect_every"))
        sections["powls"] = _build(PowlsConfig, section, "consensus")
    take("trainer", TrainerConfig, fix_trainer)
    take("data", DataConfig, None)
    take("credit", CreditConfig, None)
    take("incentive", IncentiveConfig, None)
    take("network", NetworkConfig, None)
    take("faults", FaultConfig, fix_faults)

    if raw:
        raise ConfigError(f"unknown top-level sections: {sorted(raw)}")
    allowed_run = {"rounds", "seed", "consensus", "out_dir", "reselect_every"}
    unknown = set(run) - allowed_run
    if unknown:
        raise ConfigError(f"unknown keys in [run]: {sorted(unknown)}")
    try:
        return ExperimentConfig(**run, **sections)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Replace top-level fields (seed, rounds, consensus, out_dir, ...)."""
    clean = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(cfg, **clean) if clean else cfg
