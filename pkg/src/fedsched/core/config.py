"""Functions and data structures used to represent and manage the experiment
configuration."""
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import cattrs
import toml
from attrs import define, field, fields
from cattrs.errors import BaseValidationError

from fedsched.core.archgen import ArchMode
from fedsched.core.strategy import LearningStrategy
from fedsched.core.topology import Domain, NetworkLink, Server

__all__ = [
    "AgentConfig",
    "Config",
    "ConfigError",
    "DistillConfig",
    "ExperimentConfig",
    "FedConfig",
    "TopologyConfig",
    "WorkloadConfig",
    "apply_overrides",
    "load_config",
    "parse_config",
]


class ConfigError(ValueError):
    """Raised when the configuration cannot be loaded.

    Arguments:
        reason: what is wrong.
    """

    def __init__(self, reason: str) -> None:
        super().__init__(reason)

        self.reason = reason

    def __str__(self):
        return f"invalid configuration: {self.reason}"


@define(frozen=True, kw_only=True)
class TopologyConfig:
    """Configuration of the infrastructure.

    Either `template = "tiers"` generates `domains` low/medium/high capability
    domains, or `template` is left empty and `servers`, `links` and `groups`
    list the infrastructure explicitly.

    Arguments:
        template: name of the generator, or empty for explicit topologies.
        domains: number of generated domains.
        jitter: relative jitter of generated servers.
        max_background_util: upper bound of generated background
            utilization.
        servers: explicit servers.
        links: explicit links.
        groups: explicit domains.
    """

    template: str = "tiers"
    domains: int = 6
    jitter: float = 0.1
    max_background_util: float = 0.3
    servers: List[Server] = field(factory=list)
    links: List[NetworkLink] = field(factory=list)
    groups: List[Domain] = field(factory=list)


@define(frozen=True, kw_only=True)
class WorkloadConfig:
    """Configuration of the synthetic applications.

    Arguments:
        train_applications: training applications per domain.
        eval_applications: evaluation applications per domain.
        min_tasks: minimum tasks per application.
        max_tasks: maximum tasks per application.
        edge_density: probability of extra forward edges.
        arrival_rate_hz: Poisson arrival rate.
        dominant_share: share of a domain's applications drawn from its
            dominant task class.
    """

    train_applications: int = 20
    eval_applications: int = 10
    min_tasks: int = 3
    max_tasks: int = 10
    edge_density: float = 0.2
    arrival_rate_hz: float = 0.5
    dominant_share: float = 0.7


@define(frozen=True, kw_only=True)
class AgentConfig:
    """Configuration of the agents and of architecture generation.

    Arguments:
        gamma: discount factor.
        lr: learning rate of local training.
        alpha_cost: weight of completion time in the weighted cost.
        k_arch: number of shared architecture types.
        depth_min: minimum personal zone depth.
        depth_max: maximum personal zone depth.
        width_min: minimum personal zone width.
        width_max: maximum personal zone width.
        alpha_arch: fraction of the capability score used for sizing.
        arch_mode: adaptive generation or a fixed baseline.
        resource_weights: importance of cores, frequency, memory and
            bandwidth; uniform when empty.
        max_grad_norm: global gradient norm clip, 0 disables clipping.
        tune_lr: pick each domain's learning rate with a probe.
        lr_grid: candidate learning rates of the probe.
        probe_rounds: rounds run by the probe.
    """

    gamma: float = 0.95
    lr: float = 0.001
    alpha_cost: float = 0.5
    k_arch: int = 8
    depth_min: int = 2
    depth_max: int = 10
    width_min: int = 16
    width_max: int = 512
    alpha_arch: float = 1.0
    arch_mode: ArchMode = ArchMode.ADAPTIVE
    resource_weights: List[float] = field(factory=list)
    max_grad_norm: float = 1.0
    tune_lr: bool = False
    lr_grid: List[float] = field(factory=lambda: [0.0003, 0.001, 0.003])
    probe_rounds: int = 5


@define(frozen=True, kw_only=True)
class FedConfig:
    """Configuration of the federated barriers.

    Arguments:
        t_fed: rounds between barriers.
        epsilon: privacy budget of every feature release.
        tau_drift: drift that triggers re-clustering.
        clusters: number of environment clusters.
        beta_fed: damping of cross-cluster weights.
        window: applications summarized by the features.
    """

    t_fed: int = 5
    epsilon: float = 1.0
    tau_drift: float = 0.1
    clusters: int = 2
    beta_fed: float = 0.5
    window: int = 50


@define(frozen=True, kw_only=True)
class DistillConfig:
    """Configuration of knowledge distillation.

    Arguments:
        tau_env: minimum teacher compatibility.
        top_k: maximum teachers per student.
        tau_temp: soft target temperature.
        alpha_distill: weight of the policy term.
        beta_distill: episode bonus per unit of compatibility.
        e_base: base episodes per teacher.
        lr: student learning rate.
        kd_rounds: distillation passes after each federated barrier.
    """

    tau_env: float = 0.6
    top_k: int = 3
    tau_temp: float = 3.0
    alpha_distill: float = 0.7
    beta_distill: float = 0.5
    e_base: int = 10
    lr: float = 0.001
    kd_rounds: int = 1


@define(frozen=True, kw_only=True)
class ExperimentConfig:
    """Configuration of the experiment loop.

    Arguments:
        strategy: learning strategy.
        rounds: training rounds.
        local_epochs: passes over the round's applications per round.
        apps_per_round: training applications scheduled per epoch.
        eval_period: rounds between evaluation phases.
        seed: base seed.
        workers: threads running local epochs.
        scale: domain counts of the scaling experiment.
        seeds: seeds of the ablation experiment.
    """

    strategy: LearningStrategy = LearningStrategy.FL_COMPLETE_KD
    rounds: int = 200
    local_epochs: int = 1
    apps_per_round: int = 4
    eval_period: int = 10
    seed: int = 0
    workers: int = 1
    scale: List[int] = field(factory=list)
    seeds: List[int] = field(factory=lambda: [0, 1, 2, 3, 4])


@define(frozen=True, kw_only=True)
class Config:
    """The experiment configuration, one attribute per document section."""

    topology: TopologyConfig = field(factory=TopologyConfig)
    workload: WorkloadConfig = field(factory=WorkloadConfig)
    agent: AgentConfig = field(factory=AgentConfig)
    fed: FedConfig = field(factory=FedConfig)
    distill: DistillConfig = field(factory=DistillConfig)
    experiment: ExperimentConfig = field(factory=ExperimentConfig)


def _section_types() -> Dict[str, type]:
    return {f.name: f.type for f in fields(Config)}


def _parse_value(raw: str) -> Any:
    try:
        return toml.loads(f"value = {raw}")["value"]

    except (ValueError, IndexError):
        return raw


def apply_overrides(document: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Applies `section.key=value` overrides to a raw configuration document.

    Values are parsed as TOML literals and fall back to plain strings.

    Raises:
        ConfigError: if an override is malformed or names an unknown key.
    """
    sections = _section_types()
    result = {name: dict(v) if isinstance(v, dict) else v for name, v in document.items()}

    for override in overrides:
        key, sep, raw = override.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"override {override!r} is not section.key=value")

        if section not in sections:
            raise ConfigError(f"unknown section {section!r}")

        if name not in {f.name for f in fields(sections[section])}:
            raise ConfigError(f"unknown key {section}.{name}")

        result.setdefault(section, {})[name] = _parse_value(raw.strip())

    return result


def parse_config(document: Dict[str, Any]) -> Config:
    """Structures a raw configuration document.

    Raises:
        ConfigError: on unknown sections or keys and on ill-typed values.
    """
    sections = _section_types()

    for section, values in document.items():
        if section not in sections:
            raise ConfigError(f"unknown section {section!r}")

        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be a table")

        known = {f.name for f in fields(sections[section])}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {', '.join(unknown)}")

    try:
        return cattrs.structure(document, Config)

    except (ValueError, TypeError, KeyError, BaseValidationError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Path | str, overrides: Optional[Sequence[str]] = None) -> Config:
    """Loads the configuration from a file.

    Arguments:
        path: configuration file's path.
        overrides: `section.key=value` overrides applied after loading.

    Raises:
        ConfigError: if the file cannot be read or does not describe a valid
            configuration.
    """
    try:
        document = toml.load(path)

    except (OSError, toml.TomlDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc

    return parse_config(apply_overrides(document, overrides or []))
