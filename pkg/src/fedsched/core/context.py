"""Definition of the context capturing all the data needed to run an
experiment."""
from attrs import define, evolve

from fedsched.core.config import Config, ConfigError
from fedsched.core.env import EncodingLayout
from fedsched.core.topology import (
    StructuralError,
    Topology,
    TopologyTemplate,
    generate_topology,
)
from fedsched.core.workload import WorkloadProfile

__all__ = ["Context", "build_layout", "build_topology", "load_context", "with_domains"]


@define(frozen=True, kw_only=True)
class Context:
    """Contains all the data needed to run any experiment command.

    Arguments:
        config: the experiment configuration.
        topology: the materialized infrastructure.
        layout: the state encoding shared by every domain.
    """

    config: Config
    topology: Topology
    layout: EncodingLayout


def build_topology(config: Config) -> Topology:
    """Materializes the configured topology.

    Raises:
        ConfigError: if the template is unknown or the explicit topology is
            structurally broken.
    """
    topo = config.topology

    match topo.template:
        case "tiers":
            template = TopologyTemplate(
                jitter=topo.jitter, max_background_util=topo.max_background_util
            )
            return generate_topology(template, topo.domains, config.experiment.seed)

        case "":
            topology = Topology(servers=topo.servers, links=topo.links, domains=topo.groups)
            if not topology.domains:
                raise ConfigError("explicit topology without domains")

            try:
                topology.validate()

            except StructuralError as exc:
                raise ConfigError(str(exc)) from exc

            return topology

        case _:
            raise ConfigError(f"unknown topology template {topo.template!r}")


def build_layout(topology: Topology, config: Config) -> EncodingLayout:
    """Derives the state encoding from the topology and the workload
    ranges."""
    profile = WorkloadProfile()
    work = config.workload

    return EncodingLayout(
        max_servers=max(len(d.servers) for d in topology.domains),
        freq_max_mhz=max(s.freq_mhz for s in topology.servers),
        ram_max_gb=max(s.ram_gb for s in topology.servers),
        bandwidth_max_bps=max((l.bandwidth_bps for l in topology.links), default=1.0),
        cycles_max=max(r.cycles[1] for r in profile.classes.values()),
        task_ram_max_gb=max(r.ram_gb[1] for r in profile.classes.values()),
        # room for the data of a few predecessors before clipping
        data_max_bytes=3.0 * max(r.data_bytes[1] for r in profile.classes.values()),
        max_tasks=work.max_tasks,
        max_degree=max(1, work.max_tasks - 1),
    )


def load_context(config: Config) -> Context:
    """Prepares the context of an experiment.

    Arguments:
        config: the experiment configuration.

    Returns:
        The context.

    Raises:
        ConfigError: if the topology cannot be built.
    """
    topology = build_topology(config)

    return Context(config=config, topology=topology, layout=build_layout(topology, config))


def with_domains(ctx: Context, n_domains: int) -> Context:
    """Returns the context of the same templated experiment on `n_domains`
    domains."""
    if not ctx.config.topology.template:
        raise ConfigError("scaling needs a templated topology")

    config = evolve(ctx.config, topology=evolve(ctx.config.topology, domains=n_domains))

    return load_context(config)
