"""Synthetic DAG workload generator."""
import enum
from typing import Dict, List, Tuple

import numpy as np
from attrs import define, field

from fedsched.core.dag import DagApplication, TaskNode, validate_application

__all__ = [
    "ClassRanges",
    "GenerationError",
    "TaskClass",
    "WorkloadProfile",
    "generate_workload",
]


@enum.unique
class TaskClass(enum.Enum):
    """Resource character of an application."""

    IO_BOUND = "io-bound"
    CPU_BOUND = "cpu-bound"
    MEMORY_INTENSIVE = "memory-intensive"


@define(frozen=True, kw_only=True)
class ClassRanges:
    """Uniform sampling ranges of the task attributes of one class.

    Arguments:
        cycles: CPU cycles per task.
        ram_gb: memory per task in GB.
        data_bytes: bytes sent along each dependency edge.
    """

    cycles: Tuple[float, float]
    ram_gb: Tuple[float, float]
    data_bytes: Tuple[float, float]


def _default_classes() -> Dict[TaskClass, ClassRanges]:
    return {
        TaskClass.IO_BOUND: ClassRanges(
            cycles=(2e8, 8e8), ram_gb=(0.05, 0.2), data_bytes=(5e6, 2e7)
        ),
        TaskClass.CPU_BOUND: ClassRanges(
            cycles=(1.5e9, 4e9), ram_gb=(0.1, 0.4), data_bytes=(2e5, 2e6)
        ),
        TaskClass.MEMORY_INTENSIVE: ClassRanges(
            cycles=(5e8, 1.5e9), ram_gb=(0.4, 1.2), data_bytes=(1e6, 5e6)
        ),
    }


def _default_mix() -> Dict[TaskClass, float]:
    return {cls: 1.0 for cls in TaskClass}


@define(frozen=True, kw_only=True)
class WorkloadProfile:
    """Shape of the generated applications.

    Arguments:
        applications: number of applications to generate.
        min_tasks: minimum tasks per application.
        max_tasks: maximum tasks per application.
        edge_density: fraction of the possible forward edges that are added on
            top of the edges connecting consecutive layers, in [0, 1].
        arrival_rate_hz: Poisson arrival rate of the applications.
        classes: attribute ranges per task class.
        mix: relative frequency of each task class.
        first_id: id of the first generated application.
    """

    applications: int = 20
    min_tasks: int = 3
    max_tasks: int = 10
    edge_density: float = 0.2
    arrival_rate_hz: float = 0.5
    classes: Dict[TaskClass, ClassRanges] = field(factory=_default_classes)
    mix: Dict[TaskClass, float] = field(factory=_default_mix)
    first_id: int = 0


class GenerationError(ValueError):
    """Raised when a workload profile cannot produce valid DAGs."""

    def __init__(self, reason: str) -> None:
        super().__init__(reason)

        self.reason = reason

    def __str__(self):
        return f"infeasible workload profile: {self.reason}"


def _check_range(name: str, bounds: Tuple[float, float]):
    low, high = bounds
    if not 0 < low <= high:
        raise GenerationError(f"{name} range {bounds} must satisfy 0 < low <= high")


def _check_profile(profile: WorkloadProfile):
    if profile.applications < 0:
        raise GenerationError("negative application count")

    if not 1 <= profile.min_tasks <= profile.max_tasks:
        raise GenerationError(
            f"task range [{profile.min_tasks}, {profile.max_tasks}] must satisfy 1 <= min <= max"
        )

    # a density above 1 asks for more edges than a DAG on the same nodes can hold
    if not 0.0 <= profile.edge_density <= 1.0:
        raise GenerationError(f"edge density {profile.edge_density} outside [0, 1]")

    if not profile.arrival_rate_hz > 0:
        raise GenerationError("arrival rate must be positive")

    weights = [profile.mix.get(cls, 0.0) for cls in TaskClass]
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise GenerationError("class mix must have non-negative weights with positive sum")

    for cls in TaskClass:
        if profile.mix.get(cls, 0.0) > 0:
            if cls not in profile.classes:
                raise GenerationError(f"no ranges for class {cls.value}")

            ranges = profile.classes[cls]
            _check_range(f"{cls.value} cycles", ranges.cycles)
            _check_range(f"{cls.value} ram", ranges.ram_gb)
            _check_range(f"{cls.value} data", ranges.data_bytes)


def _layers(n_tasks: int, rng: np.random.Generator) -> List[List[int]]:
    n_layers = int(rng.integers(1, n_tasks + 1))
    # every layer gets one task, the rest are spread at random
    sizes = np.ones(n_layers, dtype=int)
    for idx in rng.integers(0, n_layers, size=n_tasks - n_layers):
        sizes[idx] += 1

    layers = []
    next_id = 0
    for size in sizes:
        layers.append(list(range(next_id, next_id + int(size))))
        next_id += int(size)

    return layers


def _generate_application(
    app_id: int, arrival_s: float, profile: WorkloadProfile, rng: np.random.Generator
) -> DagApplication:
    classes = list(TaskClass)
    weights = np.array([profile.mix.get(cls, 0.0) for cls in classes], dtype=float)
    task_class = classes[int(rng.choice(len(classes), p=weights / weights.sum()))]
    ranges = profile.classes[task_class]

    n_tasks = int(rng.integers(profile.min_tasks, profile.max_tasks + 1))
    layers = _layers(n_tasks, rng)
    layer_of = {tid: idx for idx, layer in enumerate(layers) for tid in layer}

    edges = set()
    for idx in range(1, len(layers)):
        for tid in layers[idx]:
            edges.add((int(rng.choice(layers[idx - 1])), tid))

    # forward-only extra edges keep the graph acyclic
    for pred in range(n_tasks):
        for succ in range(pred + 1, n_tasks):
            if layer_of[succ] > layer_of[pred] and (pred, succ) not in edges:
                if rng.random() < profile.edge_density:
                    edges.add((pred, succ))

    tasks = []
    for tid in range(n_tasks):
        out = {
            succ: float(rng.uniform(*ranges.data_bytes))
            for pred, succ in sorted(edges)
            if pred == tid
        }
        tasks.append(
            TaskNode(
                app_id=app_id,
                task_id=tid,
                cpu_cycles=float(rng.uniform(*ranges.cycles)),
                ram_gb=float(rng.uniform(*ranges.ram_gb)),
                out_data_bytes=out,
            )
        )

    return DagApplication(id=app_id, tasks=tasks, edges=edges, arrival_s=arrival_s)


def generate_workload(profile: WorkloadProfile, seed: int) -> List[DagApplication]:
    """Generates layered random DAG applications.

    Arguments:
        profile: shape of the applications.
        seed: seed of the generator; the same seed yields the same workload.

    Returns:
        The generated applications, ordered by arrival.

    Raises:
        GenerationError: if the profile is infeasible.
    """
    _check_profile(profile)

    rng = np.random.default_rng(seed)
    apps = []
    clock = 0.0

    for offset in range(profile.applications):
        app = _generate_application(profile.first_id + offset, clock, profile, rng)
        validate_application(app)
        apps.append(app)

        clock += float(rng.exponential(1.0 / profile.arrival_rate_hz))

    return apps
