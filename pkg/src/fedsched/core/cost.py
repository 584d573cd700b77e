"""Completion-time, energy and weighted-cost models and the constraint
checker.

Units are fixed: cycles, Hz (configured as MHz), bytes, bits per second,
watts, seconds and joules.
"""
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from attrs import define, field

from fedsched.core.dag import (
    DagApplication,
    TaskNode,
    longest_path,
    predecessors,
    successors,
    topological_order,
)
from fedsched.core.topology import Domain, Server, Topology, validate_topology

__all__ = [
    "ConstraintReport",
    "ConstraintResult",
    "RoutingError",
    "RunningBounds",
    "SchedulingConfig",
    "WeightedCostParams",
    "application_completion_time",
    "application_energy",
    "check_constraints",
    "communication_latency",
    "data_transfer_time",
    "earliest_start_times",
    "processing_duration",
    "ram_fits",
    "reference_params",
    "task_completion_time",
    "task_energy",
    "transfer_latency",
    "weighted_cost",
]

TaskKey = Tuple[int, int]
Placement = Tuple[int, int]


@define(frozen=True, kw_only=True)
class SchedulingConfig:
    """Placement of tasks on servers.

    Arguments:
        assignments: `(app_id, task_id)` mapped to `(server_id, domain_id)`.
    """

    assignments: Dict[TaskKey, Placement] = field(factory=dict)

    def server_of(self, app_id: int, task_id: int) -> int:
        """Returns the server a task is placed on."""
        return self.assignments[(app_id, task_id)][0]

    def with_assignment(self, app_id: int, task_id: int, placement: Placement):
        """Returns a copy of the configuration with one more placement."""
        return SchedulingConfig(assignments={**self.assignments, (app_id, task_id): placement})


@define(frozen=True, kw_only=True)
class WeightedCostParams:
    """Normalization parameters of the weighted cost.

    Arguments:
        alpha_cost: weight of the completion time term.
        ct_min: lower completion time bound in seconds.
        ct_max: upper completion time bound in seconds.
        e_min: lower energy bound in joules.
        e_max: upper energy bound in joules.
    """

    alpha_cost: float = 0.5
    ct_min: float = 0.0
    ct_max: float = 0.0
    e_min: float = 0.0
    e_max: float = 0.0


class RoutingError(LookupError):
    """Raised when data must travel between two servers without a link."""

    def __init__(self, src: int, dst: int) -> None:
        super().__init__(src, dst)

        self.src = src
        self.dst = dst

    def __str__(self):
        return f"no route between servers {self.src} and {self.dst}"


def data_transfer_time(
    pred: TaskNode, succ_id: int, src_server: int, dst_server: int, topology: Topology
) -> float:
    """Time to move the output of `pred` destined to `succ_id` between two
    servers; zero on the same server.

    Raises:
        RoutingError: if distinct servers have no link.
    """
    if src_server == dst_server:
        return 0.0

    link = topology.link(src_server, dst_server)
    if link is None:
        raise RoutingError(src_server, dst_server)

    return pred.out_data_bytes[succ_id] * 8.0 / link.bandwidth_bps


def transfer_latency(
    pred: TaskNode, succ_id: int, src_server: int, dst_server: int, topology: Topology
) -> float:
    """Transfer time plus propagation between two servers; zero on the same
    server."""
    if src_server == dst_server:
        return 0.0

    transfer = data_transfer_time(pred, succ_id, src_server, dst_server, topology)
    link = topology.link(src_server, dst_server)

    return transfer + link.propagation_s


def communication_latency(
    app: DagApplication, task_id: int, config: SchedulingConfig, topology: Topology
) -> float:
    """Time until the data of every predecessor has reached the task's
    server; zero for entry tasks."""
    server = config.server_of(app.id, task_id)
    latency = 0.0

    for pred_id in sorted(predecessors(app, task_id)):
        pred_server = config.server_of(app.id, pred_id)
        latency = max(
            latency,
            transfer_latency(app.task(pred_id), task_id, pred_server, server, topology),
        )

    return latency


def processing_duration(task: TaskNode, server: Server) -> float:
    """Execution time of a task on a server."""
    return task.cpu_cycles / server.freq_hz


def task_completion_time(
    app: DagApplication, task_id: int, config: SchedulingConfig, topology: Topology
) -> float:
    """Communication latency plus processing duration of a task."""
    server = topology.server(config.server_of(app.id, task_id))

    return communication_latency(app, task_id, config, topology) + processing_duration(
        app.task(task_id), server
    )


def application_completion_time(
    app: DagApplication, config: SchedulingConfig, topology: Topology
) -> float:
    """Sum of the completion times of the tasks on the critical path, the
    critical path being ranked by the same completion times."""
    durations = {
        tid: task_completion_time(app, tid, config, topology) for tid in app.task_ids
    }
    total, _ = longest_path(app, durations)

    return total


def task_energy(
    app: DagApplication, task_id: int, config: SchedulingConfig, topology: Topology
) -> float:
    """Processing energy plus the energy spent sending data to successors on
    other servers."""
    task = app.task(task_id)
    server = topology.server(config.server_of(app.id, task_id))
    energy = processing_duration(task, server) * server.power_compute_w

    if task.has_successors:
        for succ_id in sorted(successors(app, task_id)):
            dst = config.server_of(app.id, succ_id)
            if dst == server.id:
                continue

            energy += (
                data_transfer_time(task, succ_id, server.id, dst, topology)
                * server.power_transmit_w
            )

    return energy


def application_energy(app: DagApplication, config: SchedulingConfig, topology: Topology) -> float:
    """Total energy of all the tasks of an application."""
    return sum(task_energy(app, tid, config, topology) for tid in app.task_ids)


def _normalize(value: float, low: float, high: float) -> float:
    if high <= low:
        return 0.0

    return min(1.0, max(0.0, (value - low) / (high - low)))


def weighted_cost(ct: float, e: float, params: WeightedCostParams) -> float:
    """Convex combination of the normalized completion time and energy,
    each term clamped to [0, 1]; a degenerate range contributes 0."""
    return params.alpha_cost * _normalize(ct, params.ct_min, params.ct_max) + (
        1.0 - params.alpha_cost
    ) * _normalize(e, params.e_min, params.e_max)


class RunningBounds:
    """Running minima and maxima of completion time and energy observed by a
    domain."""

    def __init__(self):
        self.ct_min: Optional[float] = None
        self.ct_max: Optional[float] = None
        self.e_min: Optional[float] = None
        self.e_max: Optional[float] = None

    def observe(self, ct: float, e: float):
        """Widens the bounds to include a new observation."""
        self.ct_min = ct if self.ct_min is None else min(self.ct_min, ct)
        self.ct_max = ct if self.ct_max is None else max(self.ct_max, ct)
        self.e_min = e if self.e_min is None else min(self.e_min, e)
        self.e_max = e if self.e_max is None else max(self.e_max, e)

    def params(self, alpha_cost: float) -> WeightedCostParams:
        """Returns the current bounds as cost parameters."""
        return WeightedCostParams(
            alpha_cost=alpha_cost,
            ct_min=self.ct_min or 0.0,
            ct_max=self.ct_max or 0.0,
            e_min=self.e_min or 0.0,
            e_max=self.e_max or 0.0,
        )

    def copy(self) -> "RunningBounds":
        """Returns an independent copy of the bounds."""
        other = RunningBounds()
        other.ct_min, other.ct_max = self.ct_min, self.ct_max
        other.e_min, other.e_max = self.e_min, self.e_max

        return other


def reference_params(
    app: DagApplication, servers: Sequence[Server], topology: Topology, alpha_cost: float
) -> WeightedCostParams:
    """Normalization bounds taken from every single-server placement of an
    application.

    Single-server placements have no communication, so their minima are the
    smallest completion time and energy the servers can deliver when memory is
    ignored.
    """
    cts = []
    energies = []

    for server in servers:
        config = SchedulingConfig(
            assignments={(app.id, tid): (server.id, -1) for tid in app.task_ids}
        )
        cts.append(application_completion_time(app, config, topology))
        energies.append(application_energy(app, config, topology))

    return WeightedCostParams(
        alpha_cost=alpha_cost,
        ct_min=min(cts),
        ct_max=max(cts),
        e_min=min(energies),
        e_max=max(energies),
    )


def ram_fits(load_gb: float, capacity_gb: float) -> bool:
    """Memory constraint: the resident load must stay strictly below the
    server's memory."""
    return load_gb < capacity_gb


def earliest_start_times(
    app: DagApplication, config: SchedulingConfig, topology: Topology
) -> Dict[int, float]:
    """Earliest start time of every task under a placement: a task starts
    once each predecessor has finished and its data has arrived."""
    start: Dict[int, float] = {}
    finish: Dict[int, float] = {}

    for task_id in topological_order(app):
        server = config.server_of(app.id, task_id)
        ready = 0.0

        for pred_id in predecessors(app, task_id):
            pred_server = config.server_of(app.id, pred_id)
            ready = max(
                ready,
                finish[pred_id]
                + transfer_latency(app.task(pred_id), task_id, pred_server, server, topology),
            )

        start[task_id] = ready
        finish[task_id] = ready + processing_duration(app.task(task_id), topology.server(server))

    return start


@define(frozen=True, kw_only=True)
class ConstraintResult:
    """Outcome of a single constraint.

    Arguments:
        passed: whether the constraint holds.
        witnesses: descriptions of every violation.
    """

    passed: bool
    witnesses: List[str] = field(factory=list)


@define(frozen=True, kw_only=True)
class ConstraintReport:
    """Outcome of every constraint, keyed by constraint tag."""

    results: Dict[str, ConstraintResult]

    @property
    def ok(self) -> bool:
        """True if every constraint holds."""
        return all(r.passed for r in self.results.values())


def _result(witnesses: List[str]) -> ConstraintResult:
    return ConstraintResult(passed=not witnesses, witnesses=witnesses)


def check_constraints(  # pylint: disable=too-many-locals,too-many-branches,too-many-arguments
    apps: Sequence[DagApplication],
    config: SchedulingConfig,
    topology: Topology,
    domains: Sequence[Domain],
    alpha_cost: float,
    start_times: Optional[Mapping[TaskKey, float]] = None,
) -> ConstraintReport:
    """Evaluates the scheduling constraints of a set of placed applications.

    Arguments:
        apps: the scheduled applications.
        config: the placement of their tasks.
        topology: the infrastructure.
        domains: the domains that made the placements.
        alpha_cost: weight of the weighted cost.
        start_times: start time of each task; when omitted the earliest start
            times of the placement are used. A task missing from the mapping
            fails `C5`.

    Returns:
        Pass/fail with witnesses for `C1`..`C6`, `DOMAIN` (placement inside
        the assigning domain) and `ROUTE` (dependencies over existing links).
    """
    known_domains = {d.id: d for d in domains}
    c1: List[str] = []
    domain_witnesses: List[str] = []

    for app in apps:
        for tid in app.task_ids:
            placement = config.assignments.get((app.id, tid))
            if placement is None:
                c1.append(f"task ({app.id}, {tid}) has no server")
                continue

            server_id, domain_id = placement
            try:
                topology.server(server_id)

            except KeyError:
                c1.append(f"task ({app.id}, {tid}) placed on unknown server {server_id}")
                continue

            domain = known_domains.get(domain_id)
            if domain is None or server_id not in domain.servers:
                domain_witnesses.append(
                    f"task ({app.id}, {tid}) placed on server {server_id} "
                    f"outside domain {domain_id}"
                )

    report = validate_topology(topology.servers, topology.links, domains)
    c2 = [v.message for v in report.by_constraint("C2")]
    c3 = [v.message for v in report.by_constraint("C3")]

    results = {
        "C1": _result(c1),
        "DOMAIN": _result(domain_witnesses),
        "C2": _result(c2),
        "C3": _result(c3),
    }

    if c1:
        for tag in ("C4", "C5", "ROUTE"):
            results[tag] = ConstraintResult(passed=False, witnesses=["incomplete placement"])

    else:
        load: Dict[int, float] = {}
        route: List[str] = []

        for app in apps:
            for task in app.tasks:
                server_id = config.server_of(app.id, task.task_id)
                load[server_id] = load.get(server_id, 0.0) + task.ram_gb

                for succ_id in task.out_data_bytes:
                    dst = config.server_of(app.id, succ_id)
                    if dst != server_id and topology.link(server_id, dst) is None:
                        route.append(
                            f"edge ({app.id}: {task.task_id}->{succ_id}) crosses unrouted "
                            f"servers {server_id}-{dst}"
                        )

        c4 = [
            f"server {sid} holds {gb:.6g} GB of {topology.server(sid).ram_gb:.6g} GB"
            for sid, gb in sorted(load.items())
            if not ram_fits(gb, topology.server(sid).ram_gb)
        ]

        c5: List[str] = []
        if not route:
            for app in apps:
                if start_times is not None:
                    missing = [tid for tid in app.task_ids if (app.id, tid) not in start_times]
                    c5.extend(f"task ({app.id}, {tid}) has no start time" for tid in missing)
                    if missing:
                        continue

                earliest = earliest_start_times(app, config, topology)
                starts = {
                    tid: (earliest[tid] if start_times is None else start_times[(app.id, tid)])
                    for tid in app.task_ids
                }

                for task in app.tasks:
                    src = config.server_of(app.id, task.task_id)
                    finish = starts[task.task_id] + processing_duration(
                        task, topology.server(src)
                    )

                    for succ_id in task.out_data_bytes:
                        dst = config.server_of(app.id, succ_id)
                        ready = finish + transfer_latency(task, succ_id, src, dst, topology)
                        if starts[succ_id] < ready - 1e-12:
                            c5.append(
                                f"task ({app.id}, {succ_id}) starts at {starts[succ_id]:.6g}s "
                                f"before its input from {task.task_id} is ready at {ready:.6g}s"
                            )

        results["C4"] = _result(c4)
        results["C5"] = _result(c5)
        results["ROUTE"] = _result(route)

    c6 = [] if 0.0 <= alpha_cost <= 1.0 else [f"alpha_cost {alpha_cost} outside [0, 1]"]
    results["C6"] = _result(c6)

    return ConstraintReport(results=results)
