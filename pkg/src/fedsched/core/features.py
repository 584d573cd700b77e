"""Environment fingerprints of a domain and their Laplace privatization."""
from typing import Sequence, Tuple

import numpy as np
from attrs import define, field

from fedsched.core.env import AppRecord
from fedsched.core.network import InvalidParameter

__all__ = [
    "EnvFeatureVector",
    "FEATURE_NAMES",
    "FeatureExtractionDeferred",
    "PrivatizedFeatures",
    "extract_env_features",
    "privatize",
]

FEATURE_NAMES = (
    "mean_cpu_util",
    "util_variance",
    "mean_bandwidth_mbps",
    "energy_per_gcycle",
    "tasks_per_app",
    "completion_time_std",
    "task_arrival_rate",
    "dependency_ratio",
)


@define(frozen=True, kw_only=True)
class EnvFeatureVector:
    """The eight statistics describing a domain, in `FEATURE_NAMES`
    order."""

    values: Tuple[float, ...] = field(converter=tuple)

    def as_array(self) -> np.ndarray:
        """Returns the features as a vector."""
        return np.array(self.values, dtype=np.float64)


@define(frozen=True, kw_only=True)
class PrivatizedFeatures:
    """Features with Laplace noise at scale `1 / epsilon`."""

    values: Tuple[float, ...] = field(converter=tuple)
    epsilon: float

    def as_array(self) -> np.ndarray:
        """Returns the features as a vector."""
        return np.array(self.values, dtype=np.float64)


class FeatureExtractionDeferred(Exception):
    """Raised when a domain has no completed application to describe."""

    def __init__(self, domain_id: int) -> None:
        super().__init__(domain_id)

        self.domain_id = domain_id

    def __str__(self):
        return f"domain {self.domain_id} has no completed application yet"


def extract_env_features(
    domain_id: int, history: Sequence[AppRecord], mean_bandwidth_bps: float, window: int = 50
) -> EnvFeatureVector:
    """Summarizes the trailing window of a domain's history.

    Arguments:
        domain_id: the described domain.
        history: finished applications, oldest first.
        mean_bandwidth_bps: mean bandwidth of the domain's links.
        window: number of trailing applications considered.

    Raises:
        FeatureExtractionDeferred: if no application succeeded in the window.
    """
    recent = list(history)[-window:]
    done = [r for r in recent if r.success]
    if not done:
        raise FeatureExtractionDeferred(domain_id)

    cpu = np.array([x for r in done for x in r.cpu_samples], dtype=np.float64)
    ram = np.array([x for r in done for x in r.ram_samples], dtype=np.float64)
    tasks = sum(r.n_tasks for r in done)
    cycles = sum(r.cpu_cycles for r in done)
    energy = sum(r.energy_j for r in done)

    arrivals = [r.arrival_s for r in done]
    span = max(arrivals) - min(arrivals)

    return EnvFeatureVector(
        values=(
            float(cpu.mean()),
            float(np.concatenate([cpu, ram]).var()),
            mean_bandwidth_bps / 1e6,
            energy / (cycles / 1e9) if cycles > 0 else 0.0,
            tasks / len(done),
            float(np.std([r.completion_time_s for r in done])),
            tasks / span if span > 0 else 0.0,
            sum(r.n_edges for r in done) / tasks,
        )
    )


def privatize(
    features: EnvFeatureVector, epsilon: float, rng: np.random.Generator
) -> PrivatizedFeatures:
    """Adds i.i.d. Laplace(0, 1 / epsilon) noise to every feature.

    Raises:
        InvalidParameter: if epsilon is not positive.
    """
    if not epsilon > 0:
        raise InvalidParameter("epsilon", epsilon, "positive")

    noise = rng.laplace(0.0, 1.0 / epsilon, size=len(features.values))

    return PrivatizedFeatures(
        values=tuple(float(x) for x in features.as_array() + noise), epsilon=epsilon
    )
