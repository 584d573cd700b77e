"""Cross-architecture knowledge distillation from environmentally
compatible, more complex teachers."""
import enum
import math
from typing import Callable, Dict, List, Mapping, Tuple

import numpy as np
from attrs import define, field

from fedsched.core.cluster import ClusterState
from fedsched.core.network import DualZoneNetwork, softmax_temperature
from fedsched.utils import warning

__all__ = [
    "DistillLogEntry",
    "DistillParams",
    "DistillReport",
    "DistillVariant",
    "DistillationAborted",
    "DistillationPlan",
    "TeacherEntry",
    "build_teacher_set",
    "compatibilities",
    "env_comp",
    "policy_kd_gradient",
    "policy_kd_loss",
    "run_distillation",
    "value_kd_loss",
]

StateCollector = Callable[[int, int], np.ndarray]


@enum.unique
class DistillVariant(enum.Enum):
    """Teacher pairing flavor.

    `COMPLETE` gates teachers by environmental compatibility and weights
    them by it; `BASIC` takes the most complex teachers with uniform weights
    and episodes.
    """

    COMPLETE = "complete"
    BASIC = "basic"


@define(frozen=True, kw_only=True)
class DistillParams:
    """Distillation parameters.

    Arguments:
        tau_env: minimum compatibility of a teacher.
        top_k: maximum number of teachers per student.
        tau_temp: softmax temperature of the soft targets.
        alpha_distill: weight of the policy term against the value term.
        beta_distill: episode bonus per unit of compatibility.
        e_base: base episodes per teacher.
        lr: student learning rate.
    """

    tau_env: float = 0.6
    top_k: int = 3
    tau_temp: float = 3.0
    alpha_distill: float = 0.7
    beta_distill: float = 0.5
    e_base: int = 10
    lr: float = 0.001


@define(frozen=True, kw_only=True)
class TeacherEntry:
    """A teacher selected for a student."""

    teacher: int
    env_comp: float
    weight: float
    episodes: int


@define(frozen=True, kw_only=True)
class DistillationPlan:
    """Teachers of a student; empty when the student skips distillation."""

    student: int
    teachers: Tuple[TeacherEntry, ...] = ()

    @property
    def empty(self) -> bool:
        """True if the student has no teacher."""
        return not self.teachers


@define(frozen=True, kw_only=True)
class DistillLogEntry:
    """Mean losses of one student-teacher pair over its episodes."""

    round: int
    student: int
    teacher: int
    weight: float
    episodes: int
    policy_kl: float
    value_mse: float
    combined: float


@define(frozen=True, kw_only=True)
class DistillReport:
    """Outcome of a distillation round.

    Arguments:
        entries: per-pair losses.
        totals: weighted loss of every distilled student.
        episodes: distillation episodes run.
        aborted: students whose round was rolled back.
    """

    entries: List[DistillLogEntry] = field(factory=list)
    totals: Dict[int, float] = field(factory=dict)
    episodes: int = 0
    aborted: Tuple[int, ...] = ()


class DistillationAborted(RuntimeError):
    """Raised when a student's distillation loss is not finite."""

    def __init__(self, student: int, teacher: int, value: float) -> None:
        super().__init__(student, teacher, value)

        self.student = student
        self.teacher = teacher
        self.value = value

    def __str__(self):
        return (
            f"distillation of student {self.student} from teacher {self.teacher} "
            f"diverged to {self.value}"
        )


def env_comp(
    features_m: np.ndarray, features_n: np.ndarray, sigma_global_sq: float
) -> float:
    """Gaussian compatibility kernel of two feature vectors."""
    diff = np.asarray(features_m, dtype=np.float64) - np.asarray(features_n, dtype=np.float64)

    return float(np.exp(-(diff @ diff) / (2.0 * sigma_global_sq)))


def compatibilities(student: int, state: ClusterState) -> Dict[int, float]:
    """Compatibility of a student with every clustered domain."""
    return {
        n: env_comp(
            np.array(state.standardized[student]),
            np.array(state.standardized[n]),
            state.global_variance,
        )
        for n in sorted(state.standardized)
    }


def build_teacher_set(
    student: int,
    types: Mapping[int, int],
    env_comps: Mapping[int, float],
    params: DistillParams,
    variant: DistillVariant = DistillVariant.COMPLETE,
) -> DistillationPlan:
    """Selects the teachers of a student.

    Teachers always have a strictly higher architecture type. The complete
    variant keeps candidates above `tau_env`, takes the `top_k` most
    compatible, weighs them by compatibility and grants
    `floor(e_base * (1 + beta_distill * comp))` episodes. The basic variant
    takes the `top_k` most complex candidates with uniform weights and
    `e_base` episodes.
    """
    higher = [n for n in sorted(types) if types[n] > types[student]]

    match variant:
        case DistillVariant.COMPLETE:
            ranked = sorted(
                (n for n in higher if n in env_comps and env_comps[n] > params.tau_env),
                key=lambda n: (-env_comps[n], n),
            )[: params.top_k]
            total = sum(env_comps[n] for n in ranked)
            teachers = tuple(
                TeacherEntry(
                    teacher=n,
                    env_comp=env_comps[n],
                    weight=env_comps[n] / total,
                    episodes=math.floor(params.e_base * (1.0 + params.beta_distill * env_comps[n])),
                )
                for n in ranked
            )

        case DistillVariant.BASIC:
            ranked = sorted(higher, key=lambda n: (-types[n], n))[: params.top_k]
            teachers = tuple(
                TeacherEntry(
                    teacher=n,
                    env_comp=env_comps.get(n, 0.0),
                    weight=1.0 / len(ranked),
                    episodes=params.e_base,
                )
                for n in ranked
            )

        case _:
            raise ValueError(f"unknown distillation variant {variant}")

    return DistillationPlan(student=student, teachers=teachers)


def _kl_parts(teacher_logits, student_logits, tau_temp, n_valid):
    teacher = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    student = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    if teacher.shape != student.shape:
        raise ValueError(f"teacher logits {teacher.shape} do not match student {student.shape}")

    n_valid = teacher.shape[1] if n_valid is None else n_valid
    p_t = softmax_temperature(teacher[:, :n_valid], tau_temp)
    p_s = softmax_temperature(student[:, :n_valid], tau_temp)

    return p_t, p_s


def policy_kd_loss(teacher_logits, student_logits, tau_temp: float, n_valid=None) -> float:
    """Mean KL divergence from the softened teacher to the softened student
    over the first `n_valid` actions, scaled by `tau_temp ** 2`."""
    p_t, p_s = _kl_parts(teacher_logits, student_logits, tau_temp, n_valid)
    kl = np.where(p_t > 0, p_t * (np.log(np.where(p_t > 0, p_t, 1.0)) - np.log(p_s)), 0.0)

    return float(tau_temp**2 * kl.sum(axis=1).mean())


def policy_kd_gradient(teacher_logits, student_logits, tau_temp: float, n_valid=None):
    """Gradient of `policy_kd_loss` w.r.t. the student logits."""
    p_t, p_s = _kl_parts(teacher_logits, student_logits, tau_temp, n_valid)
    student = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))

    grad = np.zeros_like(student)
    grad[:, : p_s.shape[1]] = tau_temp * (p_s - p_t) / student.shape[0]

    return grad


def value_kd_loss(v_teacher, v_student) -> float:
    """Mean squared difference of teacher and student values."""
    diff = np.asarray(v_teacher, dtype=np.float64) - np.asarray(v_student, dtype=np.float64)

    return float(np.mean(diff**2))


def _distill_student(  # pylint: disable=too-many-arguments,too-many-locals
    round_idx: int,
    plan: DistillationPlan,
    student: DualZoneNetwork,
    teachers: Mapping[int, DualZoneNetwork],
    collect_states: StateCollector,
    n_valid: int,
    params: DistillParams,
) -> Tuple[List[DistillLogEntry], int]:
    entries = []
    episodes = 0

    for entry in plan.teachers:
        teacher = teachers[entry.teacher]
        sums = np.zeros(3)

        for episode in range(entry.episodes):
            states = collect_states(plan.student, episode)
            target = teacher.forward_batch(states)
            cache = student.forward_batch(states)

            kl = policy_kd_loss(target.logits, cache.logits, params.tau_temp, n_valid)
            mse = value_kd_loss(target.values, cache.values)
            combined = params.alpha_distill * kl + (1.0 - params.alpha_distill) * mse
            if not np.isfinite(combined):
                raise DistillationAborted(plan.student, entry.teacher, combined)

            scale = entry.weight
            dlogits = (
                scale
                * params.alpha_distill
                * policy_kd_gradient(target.logits, cache.logits, params.tau_temp, n_valid)
            )
            dvalues = (
                scale
                * (1.0 - params.alpha_distill)
                * 2.0
                * (cache.values - target.values)
                / len(cache.values)
            )
            student.apply_gradients(student.backward(cache, dlogits, dvalues), params.lr)

            sums += (kl, mse, combined)
            episodes += 1

        means = sums / max(1, entry.episodes)
        entries.append(
            DistillLogEntry(
                round=round_idx,
                student=plan.student,
                teacher=entry.teacher,
                weight=entry.weight,
                episodes=entry.episodes,
                policy_kl=float(means[0]),
                value_mse=float(means[1]),
                combined=float(means[2]),
            )
        )

    return entries, episodes


def run_distillation(  # pylint: disable=too-many-arguments
    round_idx: int,
    nets: Mapping[int, DualZoneNetwork],
    plans: Mapping[int, DistillationPlan],
    collect_states: StateCollector,
    n_valid: Mapping[int, int],
    params: DistillParams,
) -> DistillReport:
    """Distills every student from its teachers, updating students in place.

    Teachers are snapshotted before any student moves. Each episode the
    student collects states in its own environment, the teacher labels them
    and the student takes one gradient step on the weighted policy and value
    losses. A student whose loss diverges is restored and reported.

    Arguments:
        round_idx: current training round.
        nets: network of every domain.
        plans: teacher plan of every student.
        collect_states: returns the encoded states of a student episode,
            called as `collect_states(student, episode)`.
        n_valid: number of servers of every domain.
        params: distillation parameters.
    """
    referenced = sorted({e.teacher for p in plans.values() for e in p.teachers})
    teachers = {n: nets[n].copy() for n in referenced}

    entries: List[DistillLogEntry] = []
    totals: Dict[int, float] = {}
    aborted: List[int] = []
    episodes = 0

    for student_id in sorted(plans):
        plan = plans[student_id]
        if plan.empty:
            warning(f"domain {student_id} has no compatible teachers, skipping")
            continue

        backup = nets[student_id].copy()
        try:
            student_entries, count = _distill_student(
                round_idx,
                plan,
                nets[student_id],
                teachers,
                collect_states,
                n_valid[student_id],
                params,
            )

        except DistillationAborted as exc:
            warning(str(exc))
            restored = nets[student_id]
            for layer, saved in zip(restored.layers(), backup.layers()):
                layer.weights = saved.weights
                layer.biases = saved.biases
            aborted.append(student_id)
            continue

        entries.extend(student_entries)
        totals[student_id] = sum(e.weight * e.combined for e in student_entries)
        episodes += count

    return DistillReport(entries=entries, totals=totals, episodes=episodes, aborted=tuple(aborted))
