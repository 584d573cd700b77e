"""Capability assessment and resource-aware architecture generation."""
import enum
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from attrs import define, field

from fedsched.core.network import DualZoneNetwork, build_network
from fedsched.core.topology import Server
from fedsched.utils import warning

__all__ = [
    "ArchMode",
    "ArchParams",
    "ArchitectureAssignment",
    "CapabilityScore",
    "CapabilityVector",
    "NotEnoughDomains",
    "RESOURCES",
    "assign_type",
    "capability_score",
    "capability_vector",
    "effective_resource",
    "generate_architectures",
    "size_personal_zone",
]

RESOURCES = ("cores", "freq_ghz", "memory_mb", "bandwidth_mbps")


@enum.unique
class ArchMode(enum.Enum):
    """How architectures are assigned to domains."""

    ADAPTIVE = "adaptive"
    FIXED_SMALL = "fixed-small"
    FIXED_LARGE = "fixed-large"


@define(frozen=True, kw_only=True)
class CapabilityVector:
    """Resources of a domain.

    Arguments:
        domain_id: the domain.
        static: static capacity of each resource in `RESOURCES` order.
        alpha: scaling factor of each resource.
        beta: utilization sensitivity of each resource; 0 where no
            utilization metric exists.
        util: current utilization of each resource in [0, 1].
    """

    domain_id: int
    static: Tuple[float, ...] = field(converter=tuple)
    alpha: Tuple[float, ...] = field(converter=tuple)
    beta: Tuple[float, ...] = field(converter=tuple)
    util: Tuple[float, ...] = field(converter=tuple)

    @property
    def entries(self) -> Tuple[float, ...]:
        """Effective capability of each resource."""
        return tuple(
            effective_resource(h, a, b, u)
            for h, a, b, u in zip(self.static, self.alpha, self.beta, self.util)
        )


@define(frozen=True, kw_only=True)
class CapabilityScore:
    """Standardized capability of a domain.

    Arguments:
        domain_id: the domain.
        value: the score in (0, 1).
        weights: normalized resource weights.
        means: population mean of each resource.
        stds: population standard deviation of each resource.
    """

    domain_id: int
    value: float
    weights: Tuple[float, ...]
    means: Tuple[float, ...]
    stds: Tuple[float, ...]


@define(frozen=True, kw_only=True)
class ArchitectureAssignment:
    """Architecture generated for a domain.

    Arguments:
        domain_id: the domain.
        score: capability score the architecture was derived from.
        arch_type: shared architecture type in [1, k_arch].
        pers_depth: number of personal hidden layers.
        pers_width: width of the personal hidden layers.
        parameter_count: parameters of the generated network.
    """

    domain_id: int
    score: float
    arch_type: int
    pers_depth: int
    pers_width: int
    parameter_count: int = 0


@define(frozen=True, kw_only=True)
class ArchParams:
    """Architecture generation parameters.

    Arguments:
        k_arch: number of shared architecture types.
        depth_bounds: personal zone depth range.
        width_bounds: personal zone width range.
        alpha_arch: fraction of the capability score used for sizing.
        weights: importance of each resource, uniform when omitted.
        mode: adaptive generation or one of the fixed baselines.
    """

    k_arch: int = 8
    depth_bounds: Tuple[int, int] = (2, 10)
    width_bounds: Tuple[int, int] = (16, 512)
    alpha_arch: float = 1.0
    weights: Optional[Tuple[float, ...]] = None
    mode: ArchMode = ArchMode.ADAPTIVE


class NotEnoughDomains(ValueError):
    """Raised when population statistics need more domains."""

    def __init__(self, count: int) -> None:
        super().__init__(count)

        self.count = count

    def __str__(self):
        return f"capability scores need at least 2 domains, got {self.count}"


def effective_resource(h_static: float, alpha: float, beta: float, util: float) -> float:
    """Capacity of a resource after utilization, `alpha * h * (1 - beta *
    util)`; clamped at 0."""
    load = beta * util
    if load > 1.0:
        warning(f"utilization load {load:.3g} exceeds capacity, clamping to 0")
        return 0.0

    return alpha * h_static * (1.0 - load)


def capability_vector(domain_id: int, servers: Sequence[Server], bandwidth_bps: float):
    """Builds the capability vector of a domain from its servers.

    Cores and memory are summed, frequency is averaged; CPU resources are
    sensitive to the mean background utilization, bandwidth has no
    utilization metric.
    """
    util = float(np.mean([s.utilization for s in servers]))

    return CapabilityVector(
        domain_id=domain_id,
        static=(
            float(sum(s.cores for s in servers)),
            float(np.mean([s.freq_mhz for s in servers])) / 1000.0,
            float(sum(s.ram_gb for s in servers)) * 1024.0,
            bandwidth_bps / 1e6,
        ),
        alpha=(1.0, 1.0, 1.0, 1.0),
        beta=(1.0, 1.0, 0.0, 0.0),
        util=(util, util, 0.0, 0.0),
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def capability_score(
    vectors: Sequence[CapabilityVector], weights: Optional[Sequence[float]] = None
) -> List[CapabilityScore]:
    """Sigmoid-standardized weighted capability of every domain.

    Each resource is standardized with the population mean and standard
    deviation across the domains; a resource without spread contributes half
    its weight. Weights are normalized to sum 1.

    Raises:
        NotEnoughDomains: if fewer than 2 vectors are given.
    """
    if len(vectors) < 2:
        raise NotEnoughDomains(len(vectors))

    matrix = np.array([v.entries for v in vectors], dtype=np.float64)
    k = matrix.shape[1]

    raw = np.ones(k) if weights is None else np.asarray(weights, dtype=np.float64)
    w = raw / raw.sum()

    means = matrix.mean(axis=0)
    stds = matrix.std(axis=0)
    safe = np.where(stds > 0, stds, 1.0)
    z = np.where(stds > 0, (matrix - means) / safe, 0.0)
    values = (_sigmoid(z) * w).sum(axis=1)

    return [
        CapabilityScore(
            domain_id=v.domain_id,
            value=float(value),
            weights=tuple(float(x) for x in w),
            means=tuple(float(x) for x in means),
            stds=tuple(float(x) for x in stds),
        )
        for v, value in zip(vectors, values)
    ]


def assign_type(score: float, k_arch: int) -> int:
    """Maps a capability score to a shared architecture type in [1,
    k_arch]."""
    return max(1, min(math.ceil(score * k_arch), k_arch))


def size_personal_zone(
    score: float,
    depth_bounds: Tuple[int, int],
    width_bounds: Tuple[int, int],
    alpha_arch: float,
) -> Tuple[int, int]:
    """Personal zone depth and width, growing linearly with the score."""

    def _size(bounds):
        low, high = bounds
        return min(high, max(low, math.ceil(low + alpha_arch * score * (high - low))))

    return _size(depth_bounds), _size(width_bounds)


def generate_architectures(  # pylint: disable=too-many-arguments
    vectors: Sequence[CapabilityVector],
    params: ArchParams,
    input_width: int,
    n_actions: int,
    seeds: Sequence[int],
) -> List[Tuple[ArchitectureAssignment, DualZoneNetwork]]:
    """Scores every domain and builds its dual-zone network.

    Arguments:
        vectors: capability vectors of the domains.
        params: generation parameters.
        input_width: width of the global state encoding.
        n_actions: number of server slots.
        seeds: initialization seed of each domain's network.

    Returns:
        The assignment and network of every domain, in input order.
    """
    match params.mode:
        case ArchMode.ADAPTIVE:
            scores = [s.value for s in capability_score(vectors, params.weights)]
            shapes = [
                (
                    assign_type(score, params.k_arch),
                    *size_personal_zone(
                        score, params.depth_bounds, params.width_bounds, params.alpha_arch
                    ),
                )
                for score in scores
            ]

        case ArchMode.FIXED_SMALL:
            scores = [0.0] * len(vectors)
            shapes = [(1, 1, 32)] * len(vectors)

        case ArchMode.FIXED_LARGE:
            scores = [1.0] * len(vectors)
            shapes = [
                (params.k_arch, params.depth_bounds[1], params.width_bounds[1])
            ] * len(vectors)

        case _:
            raise ValueError(f"unknown architecture mode {params.mode}")

    result = []
    for vector, score, (arch_type, depth, width), seed in zip(vectors, scores, shapes, seeds):
        net = build_network(
            input_width,
            n_actions,
            arch_type,
            [width] * depth,
            np.random.default_rng(seed),
        )
        result.append(
            (
                ArchitectureAssignment(
                    domain_id=vector.domain_id,
                    score=score,
                    arch_type=arch_type,
                    pers_depth=depth,
                    pers_width=width,
                    parameter_count=net.parameter_count(),
                ),
                net,
            )
        )

    return result
