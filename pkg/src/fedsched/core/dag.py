"""DAG applications, adjacency queries and critical-path analysis."""
from typing import Dict, FrozenSet, List, Mapping, Optional, Set, Tuple

import networkx as nx
from attrs import define, field

__all__ = [
    "DagApplication",
    "InvalidApplication",
    "MissingDuration",
    "TaskNode",
    "UnknownTask",
    "critical_path",
    "longest_path",
    "predecessors",
    "successors",
    "topological_order",
    "validate_application",
]


@define(frozen=True, kw_only=True)
class TaskNode:
    """A task of a DAG application.

    Arguments:
        app_id: id of the owning application.
        task_id: id of the task inside its application.
        cpu_cycles: computational complexity in CPU cycles.
        ram_gb: memory demand in GB.
        out_data_bytes: bytes sent to each successor, keyed by successor id.
    """

    app_id: int
    task_id: int
    cpu_cycles: float
    ram_gb: float
    out_data_bytes: Dict[int, float] = field(factory=dict)

    @property
    def has_successors(self) -> bool:
        """True unless the task is terminal."""
        return bool(self.out_data_bytes)


class UnknownTask(LookupError):
    """Raised when a task id does not belong to an application."""

    def __init__(self, app_id: int, task_id: int) -> None:
        super().__init__(app_id, task_id)

        self.app_id = app_id
        self.task_id = task_id

    def __str__(self):
        return f"application {self.app_id} has no task {self.task_id}"


class InvalidApplication(ValueError):
    """Raised when an application breaks one of the DAG invariants."""

    def __init__(self, app_id: int, reason: str) -> None:
        super().__init__(app_id, reason)

        self.app_id = app_id
        self.reason = reason

    def __str__(self):
        return f"invalid application {self.app_id}: {self.reason}"


class MissingDuration(ValueError):
    """Raised when a critical-path query lacks the duration of some tasks."""

    def __init__(self, task_ids: List[int]) -> None:
        super().__init__(task_ids)

        self.task_ids = task_ids

    def __str__(self):
        return f"missing durations for tasks {self.task_ids}"


@define(frozen=True, kw_only=True)
class DagApplication:
    """An application modeled as a DAG of tasks.

    Arguments:
        id: application id.
        tasks: the application tasks.
        edges: dependency edges as `(predecessor, successor)` pairs.
        arrival_s: arrival time of the application in seconds.
    """

    id: int
    tasks: Tuple[TaskNode, ...] = field(converter=tuple)
    edges: FrozenSet[Tuple[int, int]] = field(converter=frozenset)
    arrival_s: float = 0.0

    _by_id: Dict[int, TaskNode] = field(init=False, eq=False, repr=False)
    _preds: Dict[int, FrozenSet[int]] = field(init=False, eq=False, repr=False)
    _succs: Dict[int, FrozenSet[int]] = field(init=False, eq=False, repr=False)

    def __attrs_post_init__(self):
        preds: Dict[int, Set[int]] = {t.task_id: set() for t in self.tasks}
        succs: Dict[int, Set[int]] = {t.task_id: set() for t in self.tasks}

        for pred, succ in self.edges:
            preds.setdefault(succ, set()).add(pred)
            succs.setdefault(pred, set()).add(succ)

        object.__setattr__(self, "_by_id", {t.task_id: t for t in self.tasks})
        object.__setattr__(self, "_preds", {k: frozenset(v) for k, v in preds.items()})
        object.__setattr__(self, "_succs", {k: frozenset(v) for k, v in succs.items()})

    @property
    def task_ids(self) -> List[int]:
        """Task ids in ascending order."""
        return sorted(self._by_id)

    def task(self, task_id: int) -> TaskNode:
        """Returns a task by id.

        Raises:
            UnknownTask: if the task does not exist.
        """
        try:
            return self._by_id[task_id]

        except KeyError as exc:
            raise UnknownTask(self.id, task_id) from exc

    def graph(self) -> nx.DiGraph:
        """Returns the application as a networkx directed graph."""
        graph = nx.DiGraph()
        graph.add_nodes_from(t.task_id for t in self.tasks)
        graph.add_edges_from(self.edges)

        return graph


def predecessors(app: DagApplication, task_id: int) -> FrozenSet[int]:
    """Returns the direct predecessors of a task.

    Raises:
        UnknownTask: if the task does not exist.
    """
    app.task(task_id)

    return app._preds[task_id]  # pylint: disable=protected-access


def successors(app: DagApplication, task_id: int) -> FrozenSet[int]:
    """Returns the direct successors of a task.

    Raises:
        UnknownTask: if the task does not exist.
    """
    app.task(task_id)

    return app._succs[task_id]  # pylint: disable=protected-access


def validate_application(app: DagApplication):
    """Checks the DAG invariants of an application.

    Raises:
        InvalidApplication: if any invariant is broken.
    """
    if not app.tasks:
        raise InvalidApplication(app.id, "no tasks")

    ids = [t.task_id for t in app.tasks]
    if len(set(ids)) != len(ids):
        raise InvalidApplication(app.id, "duplicate task ids")

    known = set(ids)
    for pred, succ in app.edges:
        if pred not in known or succ not in known:
            raise InvalidApplication(app.id, f"edge ({pred}, {succ}) references unknown tasks")

    if not nx.is_directed_acyclic_graph(app.graph()):
        raise InvalidApplication(app.id, "dependency graph has a cycle")

    for task in app.tasks:
        if task.app_id != app.id:
            raise InvalidApplication(app.id, f"task {task.task_id} belongs to {task.app_id}")

        if not task.cpu_cycles > 0:
            raise InvalidApplication(app.id, f"task {task.task_id} has non-positive cycles")

        if not task.ram_gb > 0:
            raise InvalidApplication(app.id, f"task {task.task_id} has non-positive memory")

        if set(task.out_data_bytes) != set(successors(app, task.task_id)):
            raise InvalidApplication(
                app.id, f"task {task.task_id} data volumes do not match its successors"
            )

        if any(not volume > 0 for volume in task.out_data_bytes.values()):
            raise InvalidApplication(app.id, f"task {task.task_id} has non-positive data volume")


def topological_order(app: DagApplication) -> List[int]:
    """Returns the lexicographically smallest topological order of the
    tasks."""
    return list(nx.lexicographical_topological_sort(app.graph()))


def longest_path(
    app: DagApplication, durations: Mapping[int, float]
) -> Tuple[float, Tuple[int, ...]]:
    """Finds the entry-to-exit path with the highest cumulative duration.

    Among paths of equal duration the lexicographically smallest sequence of
    task ids wins.

    Arguments:
        app: the application.
        durations: duration of every task.

    Returns:
        The path's total duration and its task sequence.

    Raises:
        MissingDuration: if a task has no duration.
    """
    missing = [tid for tid in app.task_ids if tid not in durations]
    if missing:
        raise MissingDuration(missing)

    # best suffix starting at each task, computed in reverse topological order
    best: Dict[int, Tuple[float, Tuple[int, ...]]] = {}

    for task_id in reversed(topological_order(app)):
        choice: Optional[Tuple[float, Tuple[int, ...]]] = None

        for succ in sorted(successors(app, task_id)):
            candidate = best[succ]
            if (
                choice is None
                or candidate[0] > choice[0]
                or (candidate[0] == choice[0] and candidate[1] < choice[1])
            ):
                choice = candidate

        own = float(durations[task_id])
        if choice is None:
            best[task_id] = (own, (task_id,))
        else:
            best[task_id] = (own + choice[0], (task_id,) + choice[1])

    entries = [tid for tid in app.task_ids if not predecessors(app, tid)]

    result = best[entries[0]]
    for entry in entries[1:]:
        candidate = best[entry]
        if candidate[0] > result[0] or (candidate[0] == result[0] and candidate[1] < result[1]):
            result = candidate

    return result


def critical_path(app: DagApplication, durations: Mapping[int, float]) -> FrozenSet[int]:
    """Returns the tasks on the critical path of an application, see
    `longest_path`."""
    _, path = longest_path(app, durations)

    return frozenset(path)
