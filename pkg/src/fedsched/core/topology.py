"""Infrastructure topology: servers, network links and scheduling domains."""
import enum
import itertools
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from attrs import define, field

__all__ = [
    "CapabilityClass",
    "Domain",
    "NetworkLink",
    "Server",
    "StructuralError",
    "Tier",
    "Topology",
    "TopologyTemplate",
    "ValidationReport",
    "Violation",
    "generate_topology",
    "validate_topology",
]


@enum.unique
class Tier(enum.Enum):
    """Layer of the Cloud-Edge-IoT continuum a server belongs to."""

    CLOUD = "cloud"
    EDGE = "edge"
    IOT = "iot"


@define(frozen=True, kw_only=True)
class Server:
    """A computing node.

    Arguments:
        id: unique server id.
        tier: layer of the continuum.
        freq_mhz: available CPU frequency in MHz.
        ram_gb: memory capacity in GB.
        cores: number of CPU cores.
        power_compute_w: power drawn while processing, in watts.
        power_transmit_w: power drawn while transmitting, in watts.
        utilization: background CPU utilization in [0, 1].
    """

    id: int
    tier: Tier
    freq_mhz: float
    ram_gb: float
    cores: int
    power_compute_w: float
    power_transmit_w: float
    utilization: float = 0.0

    @property
    def freq_hz(self) -> float:
        """CPU frequency in cycles per second."""
        return self.freq_mhz * 1e6


@define(frozen=True, kw_only=True)
class NetworkLink:
    """A network route between two servers.

    Links are symmetric: a link declared as `(a, b)` also serves `(b, a)`.

    Arguments:
        endpoints: the pair of server ids connected by the link.
        propagation_ms: propagation time in milliseconds.
        bandwidth_bps: transmission rate in bits per second.
    """

    endpoints: Tuple[int, int]
    propagation_ms: float
    bandwidth_bps: float

    @property
    def propagation_s(self) -> float:
        """Propagation time in seconds."""
        return self.propagation_ms / 1000.0


@define(frozen=True, kw_only=True)
class Domain:
    """A scheduling domain owning a subset of the servers.

    Arguments:
        id: domain id.
        servers: ids of the servers managed by the domain, ascending.
        rng_seed: seed of every random stream owned by the domain.
    """

    id: int
    servers: Tuple[int, ...] = field(converter=lambda ids: tuple(sorted(ids)))
    rng_seed: int = 0


class StructuralError(ValueError):
    """Raised when the topology cannot be interpreted at all (duplicate ids,
    dangling references, overlapping domains).

    Arguments:
        message: what is wrong.
        ids: the offending ids.
    """

    def __init__(self, message: str, ids: Sequence[int]) -> None:
        super().__init__(message, ids)

        self.message = message
        self.ids = tuple(ids)

    def __str__(self):
        ids = ", ".join(str(i) for i in self.ids)
        return f"{self.message}: {ids}"


@define(frozen=True, kw_only=True)
class Violation:
    """A constraint violated by the topology.

    Arguments:
        constraint: constraint tag (`C2`, `C3`, `UTIL`, `ROUTE`).
        subject: ids of the servers involved.
        message: human readable description.
    """

    constraint: str
    subject: Tuple[int, ...]
    message: str


@define(frozen=True, kw_only=True)
class ValidationReport:
    """Every constraint violation found in a topology."""

    violations: List[Violation] = field(factory=list)

    @property
    def ok(self) -> bool:
        """True if the topology is admissible."""
        return not self.violations

    def by_constraint(self, constraint: str) -> List[Violation]:
        """Returns the violations of a single constraint."""
        return [v for v in self.violations if v.constraint == constraint]


def _link_key(a: int, b: int) -> Tuple[int, int]:
    return (a, b) if a <= b else (b, a)


def validate_topology(
    servers: Sequence[Server],
    links: Sequence[NetworkLink],
    domains: Sequence[Domain],
) -> ValidationReport:
    """Checks server and link lower bounds and intra-domain routing.

    Arguments:
        servers: all the servers.
        links: all the network links.
        domains: all the scheduling domains.

    Returns:
        A report listing every violation; an empty report means the topology
        is admissible.

    Raises:
        StructuralError: on duplicate ids, references to unknown servers,
            self-links or overlapping domains.
    """
    ids = [s.id for s in servers]
    duplicates = sorted({i for i in ids if ids.count(i) > 1})
    if duplicates:
        raise StructuralError("duplicate server ids", duplicates)

    known = set(ids)
    owner: Dict[int, int] = {}

    domain_ids = [d.id for d in domains]
    duplicates = sorted({i for i in domain_ids if domain_ids.count(i) > 1})
    if duplicates:
        raise StructuralError("duplicate domain ids", duplicates)

    for domain in domains:
        if not domain.servers:
            raise StructuralError("domain without servers", [domain.id])

        unknown = [sid for sid in domain.servers if sid not in known]
        if unknown:
            raise StructuralError(f"domain {domain.id} references unknown servers", unknown)

        for sid in domain.servers:
            if sid in owner:
                raise StructuralError("server owned by more than one domain", [sid])

            owner[sid] = domain.id

    violations = []

    for server in sorted(servers, key=lambda s: s.id):
        if not server.freq_mhz > 0:
            violations.append(
                Violation(
                    constraint="C3",
                    subject=(server.id,),
                    message=f"server {server.id} has non-positive frequency {server.freq_mhz}",
                )
            )

        if not server.ram_gb > 0:
            violations.append(
                Violation(
                    constraint="C3",
                    subject=(server.id,),
                    message=f"server {server.id} has non-positive memory {server.ram_gb}",
                )
            )

        if not 0.0 <= server.utilization <= 1.0:
            violations.append(
                Violation(
                    constraint="UTIL",
                    subject=(server.id,),
                    message=f"server {server.id} utilization {server.utilization} outside [0, 1]",
                )
            )

    routed = set()

    for link in links:
        a, b = link.endpoints
        if a == b:
            raise StructuralError("self-link", [a])

        unknown = [sid for sid in (a, b) if sid not in known]
        if unknown:
            raise StructuralError("link references unknown servers", unknown)

        routed.add(_link_key(a, b))

        if not link.bandwidth_bps > 0:
            violations.append(
                Violation(
                    constraint="C2",
                    subject=_link_key(a, b),
                    message=f"link {a}-{b} has non-positive bandwidth {link.bandwidth_bps}",
                )
            )

    for domain in sorted(domains, key=lambda d: d.id):
        for a, b in itertools.combinations(domain.servers, 2):
            if (a, b) not in routed:
                violations.append(
                    Violation(
                        constraint="ROUTE",
                        subject=(a, b),
                        message=f"no route between servers {a} and {b} of domain {domain.id}",
                    )
                )

    return ValidationReport(violations=violations)


@define(frozen=True, kw_only=True)
class Topology:
    """The infrastructure graph shared by every domain.

    Arguments:
        servers: all the servers.
        links: all the network links.
        domains: all the scheduling domains, ascending by id.
    """

    servers: Tuple[Server, ...] = field(converter=tuple)
    links: Tuple[NetworkLink, ...] = field(converter=tuple)
    domains: Tuple[Domain, ...] = field(converter=lambda ds: tuple(sorted(ds, key=lambda d: d.id)))

    _servers_by_id: Dict[int, Server] = field(init=False, eq=False, repr=False)
    _links_by_key: Dict[Tuple[int, int], NetworkLink] = field(init=False, eq=False, repr=False)
    _domains_by_id: Dict[int, Domain] = field(init=False, eq=False, repr=False)

    def __attrs_post_init__(self):
        object.__setattr__(self, "_servers_by_id", {s.id: s for s in self.servers})
        object.__setattr__(
            self, "_links_by_key", {_link_key(*l.endpoints): l for l in self.links}
        )
        object.__setattr__(self, "_domains_by_id", {d.id: d for d in self.domains})

    def validate(self) -> ValidationReport:
        """Validates this topology, see `validate_topology`."""
        return validate_topology(self.servers, self.links, self.domains)

    def server(self, server_id: int) -> Server:
        """Returns the server with the given id."""
        return self._servers_by_id[server_id]

    def domain(self, domain_id: int) -> Domain:
        """Returns the domain with the given id."""
        return self._domains_by_id[domain_id]

    def domain_servers(self, domain_id: int) -> List[Server]:
        """Returns the servers of a domain ordered by id."""
        return [self._servers_by_id[sid] for sid in self._domains_by_id[domain_id].servers]

    def link(self, a: int, b: int) -> Optional[NetworkLink]:
        """Returns the link between two distinct servers, if any."""
        return self._links_by_key.get(_link_key(a, b))

    def server_links(self, server_id: int, within: Iterable[int]) -> List[NetworkLink]:
        """Returns the links connecting a server to the given peers."""
        links = []
        for peer in within:
            if peer == server_id:
                continue

            link = self.link(server_id, peer)
            if link is not None:
                links.append(link)

        return links


@enum.unique
class CapabilityClass(enum.Enum):
    """Device class of a templated domain."""

    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


_COMPOSITION = {
    CapabilityClass.LOW: (Tier.IOT, Tier.IOT, Tier.IOT, Tier.EDGE),
    CapabilityClass.MEDIUM: (Tier.IOT, Tier.IOT, Tier.EDGE, Tier.EDGE, Tier.CLOUD),
    CapabilityClass.HIGH: (Tier.IOT, Tier.EDGE, Tier.CLOUD, Tier.CLOUD, Tier.CLOUD),
}

# (latency ms range, bandwidth MB/s range) per unordered tier pair.
_LINK_RANGES = {
    frozenset([Tier.IOT]): ((1.0, 6.0), (10.0, 25.0)),
    frozenset([Tier.IOT, Tier.EDGE]): ((1.0, 6.0), (10.0, 25.0)),
    frozenset([Tier.IOT, Tier.CLOUD]): ((6.0, 25.0), (14.0, 22.0)),
    frozenset([Tier.EDGE]): ((1.0, 6.0), (15.0, 25.0)),
    frozenset([Tier.EDGE, Tier.CLOUD]): ((6.0, 25.0), (15.0, 22.0)),
    frozenset([Tier.CLOUD]): ((1.0, 6.0), (15.0, 22.0)),
}


@define(frozen=True, kw_only=True)
class TopologyTemplate:
    """Parameters of the tiered topology generator.

    Arguments:
        classes: capability classes cycled over the domains.
        jitter: relative jitter applied to server frequencies and powers.
        max_background_util: upper bound of the background CPU utilization.
    """

    classes: Tuple[CapabilityClass, ...] = (
        CapabilityClass.LOW,
        CapabilityClass.MEDIUM,
        CapabilityClass.HIGH,
    )
    jitter: float = 0.1
    max_background_util: float = 0.3

    def capability_class(self, domain_id: int) -> CapabilityClass:
        """Returns the capability class of a templated domain."""
        return self.classes[domain_id % len(self.classes)]


def _make_server(server_id: int, tier: Tier, rng: np.random.Generator, template) -> Server:
    jitter = 1.0 + rng.uniform(-template.jitter, template.jitter)
    util = float(rng.uniform(0.0, template.max_background_util))

    match tier:
        case Tier.IOT:
            return Server(
                id=server_id,
                tier=tier,
                freq_mhz=1200.0 * jitter,
                ram_gb=1.0,
                cores=4,
                power_compute_w=3.5 * jitter,
                power_transmit_w=1.5,
                utilization=util,
            )

        case Tier.EDGE:
            return Server(
                id=server_id,
                tier=tier,
                freq_mhz=float(rng.uniform(2300.0, 2800.0)),
                ram_gb=float(rng.choice([8.0, 16.0, 32.0])),
                cores=int(rng.choice([6, 8])),
                power_compute_w=35.0 * jitter,
                power_transmit_w=5.0,
                utilization=util,
            )

        case Tier.CLOUD:
            return Server(
                id=server_id,
                tier=tier,
                freq_mhz=float(rng.uniform(2000.0, 2500.0)),
                ram_gb=float(rng.choice([16.0, 32.0, 64.0, 128.0])),
                cores=int(rng.choice([8, 16, 32])),
                power_compute_w=95.0 * jitter,
                power_transmit_w=10.0,
                utilization=util,
            )

        case _:
            raise ValueError(f"unknown tier {tier}")


def generate_topology(template: TopologyTemplate, n_domains: int, seed: int) -> Topology:
    """Builds a heterogeneous multi-domain topology.

    Domain `d` is generated from its own random stream, so the first domains
    of a larger topology equal the domains of a smaller one built with the
    same seed.

    Arguments:
        template: generator parameters.
        n_domains: number of domains to generate.
        seed: base seed.

    Returns:
        The generated topology.
    """
    servers: List[Server] = []
    links: List[NetworkLink] = []
    domains: List[Domain] = []

    for domain_id in range(n_domains):
        rng = np.random.default_rng([seed, domain_id])
        tiers = _COMPOSITION[template.capability_class(domain_id)]

        members = [
            _make_server(domain_id * 100 + idx, tier, rng, template)
            for idx, tier in enumerate(tiers)
        ]
        servers.extend(members)

        for a, b in itertools.combinations(members, 2):
            (lat_lo, lat_hi), (bw_lo, bw_hi) = _LINK_RANGES[frozenset([a.tier, b.tier])]
            links.append(
                NetworkLink(
                    endpoints=(a.id, b.id),
                    propagation_ms=float(rng.uniform(lat_lo, lat_hi)),
                    bandwidth_bps=float(rng.uniform(bw_lo, bw_hi)) * 8e6,
                )
            )

        domains.append(
            Domain(
                id=domain_id,
                servers=[s.id for s in members],
                rng_seed=int(rng.integers(0, 2**31 - 1)),
            )
        )

    return Topology(servers=servers, links=links, domains=domains)
