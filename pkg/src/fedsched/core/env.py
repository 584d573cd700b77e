"""Per-domain scheduling environment: observations, fixed-width state
encoding, task placement and rewards."""
import copy
import enum
from collections import deque
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np
from attrs import define, field

from fedsched.core.cost import (
    RunningBounds,
    SchedulingConfig,
    application_completion_time,
    application_energy,
    communication_latency,
    data_transfer_time,
    processing_duration,
    ram_fits,
    weighted_cost,
)
from fedsched.core.dag import DagApplication, predecessors, successors, topological_order
from fedsched.core.topology import Server, Tier, Topology

__all__ = [
    "ActionChoice",
    "AppRecord",
    "EncodingLayout",
    "EndOfEpisode",
    "InvalidAction",
    "LayoutError",
    "Outcome",
    "PENALTY",
    "QueueStatus",
    "RewardSignal",
    "SchedulingEnv",
    "ServerStatus",
    "StateObservation",
    "TaskAttributes",
    "encode_state",
]

PENALTY = -2.0

SERVER_FEATURES = 10
TASK_FEATURES = 7
QUEUE_FEATURES = 2

_TIERS = (Tier.CLOUD, Tier.EDGE, Tier.IOT)


@define(frozen=True, kw_only=True)
class ServerStatus:
    """Status of a domain server as seen by the scheduler.

    Arguments:
        id: server id.
        tier: layer of the continuum.
        cpu_util: background plus scheduled CPU utilization in [0, 1].
        freq_mhz: CPU frequency.
        available_ram_gb: memory not held by resident tasks.
        network_load: share of the application's placed dependencies that
            cross this server's links, in [0, 1].
        bandwidth_bps: mean bandwidth of the server's intra-domain links.
        pred_data_fraction: share of the pending task's input bytes produced
            on this server, in [0, 1].
    """

    id: int
    tier: Tier
    cpu_util: float
    freq_mhz: float
    available_ram_gb: float
    network_load: float
    bandwidth_bps: float
    pred_data_fraction: float


@define(frozen=True, kw_only=True)
class TaskAttributes:
    """Attributes of the pending task.

    Arguments:
        app_id: owning application.
        task_id: task id.
        cpu_cycles: computational complexity.
        ram_gb: memory demand.
        predecessors: ids of the direct predecessors, ascending.
        successors: ids of the direct successors, ascending.
        in_data_bytes: bytes received from all predecessors.
        out_data_bytes: bytes sent to all successors.
        position: index of the task in the scheduling order.
    """

    app_id: int
    task_id: int
    cpu_cycles: float
    ram_gb: float
    predecessors: Tuple[int, ...]
    successors: Tuple[int, ...]
    in_data_bytes: float
    out_data_bytes: float
    position: int


@define(frozen=True, kw_only=True)
class QueueStatus:
    """Progress of the current application.

    Arguments:
        waiting: tasks still queued behind the pending one.
        pred_complete_fraction: share of the pending task's predecessors
            already configured.
        assigned: `(task_id, server_id)` of every configured task.
    """

    waiting: int
    pred_complete_fraction: float
    assigned: Tuple[Tuple[int, int], ...]


@define(frozen=True, kw_only=True)
class StateObservation:
    """Snapshot of a domain taken before placing a task."""

    servers: Tuple[ServerStatus, ...]
    task: TaskAttributes
    queue: QueueStatus


@define(frozen=True, kw_only=True)
class ActionChoice:
    """Index of the chosen server in the domain's server list."""

    server_index: int


@enum.unique
class Outcome(enum.Enum):
    """Result of a placement."""

    SUCCESS = "success"
    FAILURE = "failure"


@define(frozen=True, kw_only=True)
class RewardSignal:
    """Reward granted for a placement."""

    value: float
    outcome: Outcome


@define(frozen=True, kw_only=True)
class AppRecord:
    """A finished application, kept as environment history.

    Arguments:
        app_id: application id.
        success: whether every task was placed.
        n_tasks: number of tasks of the application.
        n_edges: number of dependency edges.
        cpu_cycles: total CPU cycles of the application.
        arrival_s: arrival time of the application.
        completion_time_s: application completion time, `nan` on failure.
        energy_j: application energy, `nan` on failure.
        cpu_samples: CPU utilization of each domain server at completion.
        ram_samples: memory utilization of each domain server at completion.
        config: the placement of the configured tasks.
    """

    app_id: int
    success: bool
    n_tasks: int
    n_edges: int
    cpu_cycles: float
    arrival_s: float
    completion_time_s: float
    energy_j: float
    cpu_samples: Tuple[float, ...]
    ram_samples: Tuple[float, ...]
    config: SchedulingConfig = field(factory=SchedulingConfig)


class EndOfEpisode(Exception):
    """Raised when no task is pending."""


class InvalidAction(IndexError):
    """Raised when an action points outside the domain's servers."""

    def __init__(self, index: int, n_servers: int) -> None:
        super().__init__(index, n_servers)

        self.index = index
        self.n_servers = n_servers

    def __str__(self):
        return f"action {self.index} outside the {self.n_servers} domain servers"


class LayoutError(ValueError):
    """Raised when an observation does not fit the encoding layout."""

    def __init__(self, n_servers: int, max_servers: int) -> None:
        super().__init__(n_servers, max_servers)

        self.n_servers = n_servers
        self.max_servers = max_servers

    def __str__(self):
        return f"{self.n_servers} servers exceed the layout's {self.max_servers} server slots"


@define(frozen=True, kw_only=True)
class EncodingLayout:
    """Fixed-width state encoding shared by every domain.

    Each server slot holds CPU utilization, frequency, available memory,
    network load, a tier one-hot, bandwidth, the share of input data produced
    on the server and a populated flag; unused slots are zeros. The task and
    queue blocks follow the server slots.

    Arguments:
        max_servers: number of server slots and of actor outputs.
        freq_max_mhz: frequency scaled to 1.
        ram_max_gb: server memory scaled to 1.
        bandwidth_max_bps: bandwidth scaled to 1.
        cycles_max: task cycles scaled to 1.
        task_ram_max_gb: task memory scaled to 1.
        data_max_bytes: task input or output volume scaled to 1.
        max_tasks: queue length and task position scaled to 1.
        max_degree: predecessor and successor counts scaled to 1.
    """

    max_servers: int
    freq_max_mhz: float
    ram_max_gb: float
    bandwidth_max_bps: float
    cycles_max: float
    task_ram_max_gb: float
    data_max_bytes: float
    max_tasks: int
    max_degree: int

    @property
    def width(self) -> int:
        """Length of every encoded state."""
        return self.max_servers * SERVER_FEATURES + TASK_FEATURES + QUEUE_FEATURES


def _scale(value: float, maximum: float) -> float:
    if maximum <= 0:
        return 0.0

    return min(1.0, max(0.0, value / maximum))


def encode_state(obs: StateObservation, layout: EncodingLayout) -> np.ndarray:
    """Encodes an observation as a fixed-length vector in [0, 1].

    Raises:
        LayoutError: if the observation has more servers than server slots.
    """
    if len(obs.servers) > layout.max_servers:
        raise LayoutError(len(obs.servers), layout.max_servers)

    vec = np.zeros(layout.width, dtype=np.float64)

    for slot, status in enumerate(obs.servers):
        base = slot * SERVER_FEATURES
        vec[base + 0] = _scale(status.cpu_util, 1.0)
        vec[base + 1] = _scale(status.freq_mhz, layout.freq_max_mhz)
        vec[base + 2] = _scale(status.available_ram_gb, layout.ram_max_gb)
        vec[base + 3] = _scale(status.network_load, 1.0)
        vec[base + 4 + _TIERS.index(status.tier)] = 1.0
        vec[base + 7] = _scale(status.bandwidth_bps, layout.bandwidth_max_bps)
        vec[base + 8] = _scale(status.pred_data_fraction, 1.0)
        vec[base + 9] = 1.0

    base = layout.max_servers * SERVER_FEATURES
    task = obs.task
    vec[base + 0] = _scale(task.cpu_cycles, layout.cycles_max)
    vec[base + 1] = _scale(task.ram_gb, layout.task_ram_max_gb)
    vec[base + 2] = _scale(len(task.predecessors), layout.max_degree)
    vec[base + 3] = _scale(len(task.successors), layout.max_degree)
    vec[base + 4] = _scale(task.in_data_bytes, layout.data_max_bytes)
    vec[base + 5] = _scale(task.out_data_bytes, layout.data_max_bytes)
    vec[base + 6] = _scale(task.position, layout.max_tasks)

    base += TASK_FEATURES
    vec[base + 0] = _scale(obs.queue.waiting, layout.max_tasks)
    vec[base + 1] = _scale(obs.queue.pred_complete_fraction, 1.0)

    return vec


class SchedulingEnv:
    """Scheduling environment of a single domain.

    An episode places the tasks of one application, one task per step, in
    lexicographic topological order. Memory and CPU shares of placed tasks are
    held until the application completes or fails.

    Arguments:
        topology: the infrastructure.
        domain_id: the domain owning the environment.
        layout: the state encoding.
        alpha_cost: weight of the completion time in the weighted cost.
        history_limit: finished applications kept in `history`, oldest dropped
            first.
    """

    def __init__(  # pylint: disable=too-many-arguments
        self,
        topology: Topology,
        domain_id: int,
        layout: EncodingLayout,
        alpha_cost: float = 0.5,
        history_limit: int = 50,
    ):
        self.topology = topology
        self.domain_id = domain_id
        self.layout = layout
        self.alpha_cost = alpha_cost
        self.servers: List[Server] = topology.domain_servers(domain_id)

        ids = [s.id for s in self.servers]
        self._bandwidth = {}
        for server in self.servers:
            links = topology.server_links(server.id, ids)
            self._bandwidth[server.id] = (
                float(np.mean([l.bandwidth_bps for l in links])) if links else 0.0
            )

        self.task_bounds = RunningBounds()
        self.app_bounds = RunningBounds()
        self.history: Deque[AppRecord] = deque(maxlen=history_limit)
        self.last_record: Optional[AppRecord] = None

        self._app: Optional[DagApplication] = None
        self._order: List[int] = []
        self._cursor = 0
        self._config = SchedulingConfig()
        self._cpu_load: Dict[int, float] = {s.id: 0.0 for s in self.servers}
        self._ram_used: Dict[int, float] = {s.id: 0.0 for s in self.servers}
        self._crossings: Dict[int, int] = {s.id: 0 for s in self.servers}
        self._placed_edges = 0

    @property
    def n_servers(self) -> int:
        """Number of servers the domain can schedule on."""
        return len(self.servers)

    @property
    def done(self) -> bool:
        """True when no task of the current application is pending."""
        return self._app is None or self._cursor >= len(self._order)

    def reset(self, app: DagApplication):
        """Starts an episode scheduling `app`."""
        self._release()
        self._app = app
        self._order = topological_order(app)
        self._cursor = 0
        self._config = SchedulingConfig()
        self.last_record = None

    def snapshot(self) -> "SchedulingEnv":
        """Returns an independent copy of the environment, used to evaluate
        policies without touching the training bookkeeping.

        The topology and the placements are immutable and stay shared.
        """
        other = copy.copy(self)
        other.task_bounds = self.task_bounds.copy()
        other.app_bounds = self.app_bounds.copy()
        other.history = deque(self.history, maxlen=self.history.maxlen)
        other._order = list(self._order)  # pylint: disable=protected-access
        other._cpu_load = dict(self._cpu_load)  # pylint: disable=protected-access
        other._ram_used = dict(self._ram_used)  # pylint: disable=protected-access
        other._crossings = dict(self._crossings)  # pylint: disable=protected-access

        return other

    def _release(self):
        for sid in self._cpu_load:
            self._cpu_load[sid] = 0.0
            self._ram_used[sid] = 0.0
            self._crossings[sid] = 0
        self._placed_edges = 0

    def _cpu_util(self, server: Server) -> float:
        return min(1.0, server.utilization + self._cpu_load[server.id])

    def observe(self) -> StateObservation:
        """Observes the domain before placing the pending task.

        Raises:
            EndOfEpisode: if no task is pending.
        """
        if self.done:
            raise EndOfEpisode()

        app = self._app
        task_id = self._order[self._cursor]
        task = app.task(task_id)
        preds = sorted(predecessors(app, task_id))
        succs = sorted(successors(app, task_id))

        incoming: Dict[int, float] = {}
        for pred_id in preds:
            if (app.id, pred_id) in self._config.assignments:
                src = self._config.server_of(app.id, pred_id)
                incoming[src] = incoming.get(src, 0.0) + app.task(pred_id).out_data_bytes[task_id]

        in_total = sum(app.task(p).out_data_bytes[task_id] for p in preds)

        statuses = tuple(
            ServerStatus(
                id=server.id,
                tier=server.tier,
                cpu_util=self._cpu_util(server),
                freq_mhz=server.freq_mhz,
                available_ram_gb=max(0.0, server.ram_gb - self._ram_used[server.id]),
                network_load=(
                    self._crossings[server.id] / self._placed_edges if self._placed_edges else 0.0
                ),
                bandwidth_bps=self._bandwidth[server.id],
                pred_data_fraction=(
                    incoming.get(server.id, 0.0) / in_total if in_total > 0 else 0.0
                ),
            )
            for server in self.servers
        )

        configured = sum(1 for p in preds if (app.id, p) in self._config.assignments)
        assigned = tuple(
            (tid, self._config.server_of(app.id, tid)) for tid in self._order[: self._cursor]
        )

        return StateObservation(
            servers=statuses,
            task=TaskAttributes(
                app_id=app.id,
                task_id=task_id,
                cpu_cycles=task.cpu_cycles,
                ram_gb=task.ram_gb,
                predecessors=tuple(preds),
                successors=tuple(succs),
                in_data_bytes=in_total,
                out_data_bytes=sum(task.out_data_bytes.values()),
                position=self._cursor,
            ),
            queue=QueueStatus(
                waiting=len(self._order) - self._cursor - 1,
                pred_complete_fraction=configured / len(preds) if preds else 1.0,
                assigned=assigned,
            ),
        )

    def encode(self, obs: StateObservation) -> np.ndarray:
        """Encodes an observation with the environment's layout."""
        return encode_state(obs, self.layout)

    def _finish(self, success: bool, ct: float, energy: float):
        app = self._app
        record = AppRecord(
            app_id=app.id,
            success=success,
            n_tasks=len(app.tasks),
            n_edges=len(app.edges),
            cpu_cycles=sum(t.cpu_cycles for t in app.tasks),
            arrival_s=app.arrival_s,
            completion_time_s=ct,
            energy_j=energy,
            cpu_samples=tuple(self._cpu_util(s) for s in self.servers),
            ram_samples=tuple(min(1.0, self._ram_used[s.id] / s.ram_gb) for s in self.servers),
            config=self._config,
        )
        self.history.append(record)
        self.last_record = record

        self._release()
        self._cursor = len(self._order)

    def step(self, action: ActionChoice) -> Tuple[Optional[StateObservation], RewardSignal]:
        """Places the pending task on the chosen server.

        A placement fails when the server's resident memory would reach its
        capacity or when a dependency would cross two unlinked servers; a
        failure ends the episode with the penalty reward. The last placement of an
        application is rewarded with the mean of its own cost and the cost of
        the whole application.

        Returns:
            The next observation, or `None` when the episode is over, and the
            reward of the placement.

        Raises:
            EndOfEpisode: if no task is pending.
            InvalidAction: if the action is outside the domain's servers.
        """
        if self.done:
            raise EndOfEpisode()

        if not 0 <= action.server_index < self.n_servers:
            raise InvalidAction(action.server_index, self.n_servers)

        app = self._app
        task_id = self._order[self._cursor]
        task = app.task(task_id)
        server = self.servers[action.server_index]

        routed = all(
            self._config.server_of(app.id, p) == server.id
            or self.topology.link(self._config.server_of(app.id, p), server.id) is not None
            for p in predecessors(app, task_id)
        )

        if not routed or not ram_fits(self._ram_used[server.id] + task.ram_gb, server.ram_gb):
            self._finish(False, float("nan"), float("nan"))
            return None, RewardSignal(value=PENALTY, outcome=Outcome.FAILURE)

        self._config = self._config.with_assignment(app.id, task_id, (server.id, self.domain_id))
        self._ram_used[server.id] += task.ram_gb
        self._cpu_load[server.id] += 1.0 / server.cores

        energy = processing_duration(task, server) * server.power_compute_w
        for pred_id in sorted(predecessors(app, task_id)):
            src = self._config.server_of(app.id, pred_id)
            self._placed_edges += 1
            if src != server.id:
                self._crossings[src] += 1
                self._crossings[server.id] += 1
                pred = app.task(pred_id)
                energy += (
                    data_transfer_time(pred, task_id, src, server.id, self.topology)
                    * self.topology.server(src).power_transmit_w
                )

        self._cursor += 1

        tct = communication_latency(app, task_id, self._config, self.topology)
        tct += processing_duration(task, server)
        self.task_bounds.observe(tct, energy)
        cost = weighted_cost(tct, energy, self.task_bounds.params(self.alpha_cost))

        if self._cursor < len(self._order):
            return self.observe(), RewardSignal(value=-cost, outcome=Outcome.SUCCESS)

        ct = application_completion_time(app, self._config, self.topology)
        app_energy = application_energy(app, self._config, self.topology)
        self.app_bounds.observe(ct, app_energy)
        app_cost = weighted_cost(ct, app_energy, self.app_bounds.params(self.alpha_cost))
        self._finish(True, ct, app_energy)

        # mean of the task and application costs keeps the reward in [-1, 0]
        return None, RewardSignal(value=-0.5 * (cost + app_cost), outcome=Outcome.SUCCESS)
