"""Rules for running experiments: architecture generation, local training,
federated barriers, distillation and evaluation across every domain."""
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from attrs import define, evolve, field

from fedsched.core.agent import rollout
from fedsched.core.archgen import (
    ArchitectureAssignment,
    ArchParams,
    NotEnoughDomains,
    capability_vector,
    generate_architectures,
)
from fedsched.core.cluster import ClusterState
from fedsched.core.config import Config, ConfigError
from fedsched.core.context import Context, with_domains
from fedsched.core.cost import WeightedCostParams, reference_params, weighted_cost
from fedsched.core.dag import DagApplication
from fedsched.core.distill import (
    DistillParams,
    build_teacher_set,
    compatibilities,
    run_distillation,
)
from fedsched.core.env import AppRecord, SchedulingEnv
from fedsched.core.federation import FedParams, federated_round
from fedsched.core.metrics import (
    MetricsRecord,
    Phase,
    RunResult,
    summarize_records,
    write_metrics,
)
from fedsched.core.network import (
    GAMMA_RANGE,
    LR_RANGE,
    DualZoneNetwork,
    a2c_update,
    parameter_checksum,
)
from fedsched.core.state import metrics_path, save_models
from fedsched.core.strategy import LearningStrategy
from fedsched.core.topology import Topology
from fedsched.core.workload import TaskClass, WorkloadProfile, generate_workload
from fedsched.utils import log, print_waiting, success

__all__ = [
    "AblationReport",
    "CompletedRun",
    "DomainAgent",
    "Experiment",
    "ExperimentPlan",
    "PhaseStats",
    "derive_seed",
    "domain_bandwidth",
    "domain_mix",
    "domain_workloads",
    "run_ablation",
    "run_experiment",
    "scale_domains",
    "type_gap",
]

EVAL_FIRST_ID = 10000

_CLASSES = (TaskClass.IO_BOUND, TaskClass.CPU_BOUND, TaskClass.MEMORY_INTENSIVE)


def derive_seed(seed: int, *keys: int) -> int:
    """Derives an independent seed for a (domain, purpose) pair."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def domain_mix(domain_id: int, dominant_share: float) -> Dict[TaskClass, float]:
    """Task class mix of a domain: consecutive triples of domains share a
    dominant class."""
    dominant = _CLASSES[(domain_id // 3) % 3]
    rest = (1.0 - dominant_share) / (len(_CLASSES) - 1)

    return {cls: dominant_share if cls is dominant else rest for cls in _CLASSES}


def domain_workloads(
    config: Config, domain_id: int, seed: int
) -> Tuple[List[DagApplication], List[DagApplication]]:
    """Generates the training and evaluation applications of a domain.

    Evaluation applications come from another seed and another id range, so
    the two sets never share an application.
    """
    work = config.workload
    profile = WorkloadProfile(
        applications=work.train_applications,
        min_tasks=work.min_tasks,
        max_tasks=work.max_tasks,
        edge_density=work.edge_density,
        arrival_rate_hz=work.arrival_rate_hz,
        mix=domain_mix(domain_id, work.dominant_share),
    )
    train = generate_workload(profile, derive_seed(seed, domain_id, 0))
    evaluation = generate_workload(
        evolve(profile, applications=work.eval_applications, first_id=EVAL_FIRST_ID),
        derive_seed(seed, domain_id, 1),
    )

    return train, evaluation


def domain_bandwidth(topology: Topology, domain_id: int) -> float:
    """Mean bandwidth of the links inside a domain, 0 without links."""
    ids = [s.id for s in topology.domain_servers(domain_id)]
    links = {
        tuple(sorted(l.endpoints)): l.bandwidth_bps
        for sid in ids
        for l in topology.server_links(sid, ids)
    }

    return float(np.mean(list(links.values()))) if links else 0.0


@define(frozen=True, kw_only=True)
class ExperimentPlan:
    """Schedule of an experiment.

    Arguments:
        strategy: learning strategy.
        rounds: training rounds.
        local_epochs: passes over the round's applications.
        apps_per_round: training applications scheduled per epoch.
        fed_period: rounds between federated barriers.
        kd_rounds: distillation passes after each barrier.
        eval_period: rounds between evaluation phases.
        seed: base seed.
        workers: threads running local epochs.
    """

    strategy: LearningStrategy
    rounds: int
    local_epochs: int = 1
    apps_per_round: int = 4
    fed_period: int = 5
    kd_rounds: int = 1
    eval_period: int = 10
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_config(
        cls,
        config: Config,
        strategy: Optional[LearningStrategy] = None,
        rounds: Optional[int] = None,
        seed: Optional[int] = None,
    ) -> "ExperimentPlan":
        """Builds the plan of a configuration, with optional overrides.

        Raises:
            ConfigError: if a schedule value or a learning parameter is out of
                range.
        """
        exp = config.experiment
        plan = cls(
            strategy=strategy or exp.strategy,
            rounds=exp.rounds if rounds is None else rounds,
            local_epochs=exp.local_epochs,
            apps_per_round=exp.apps_per_round,
            fed_period=config.fed.t_fed,
            kd_rounds=config.distill.kd_rounds,
            eval_period=exp.eval_period,
            seed=exp.seed if seed is None else seed,
            workers=exp.workers,
        )

        for name in ("rounds", "local_epochs", "apps_per_round", "fed_period", "eval_period"):
            if getattr(plan, name) < 1:
                raise ConfigError(f"{name} must be at least 1")

        if plan.workers < 1 or plan.kd_rounds < 0:
            raise ConfigError("workers must be at least 1 and kd_rounds not negative")

        low, high = LR_RANGE
        rates = [config.agent.lr, config.distill.lr]
        if config.agent.tune_lr:
            rates.extend(config.agent.lr_grid)

        for rate in rates:
            if not low <= rate <= high:
                raise ConfigError(f"learning rate {rate} outside [{low}, {high}]")

        if not GAMMA_RANGE[0] <= config.agent.gamma <= GAMMA_RANGE[1]:
            raise ConfigError(f"gamma {config.agent.gamma} outside {list(GAMMA_RANGE)}")

        return plan


@define(frozen=True, kw_only=True)
class PhaseStats:
    """Means of a training or evaluation phase of one domain.

    Completion time, energy and utilization only cover successful
    applications and are `nan` without any; a failed application costs 1.
    """

    completion_time_s: float
    energy_j: float
    weighted_cost: float
    reward: float
    policy_loss: float = math.nan
    value_loss: float = math.nan
    cpu_util: float = math.nan
    ram_util: float = math.nan


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if values else math.nan


class DomainAgent:  # pylint: disable=too-many-instance-attributes
    """The scheduler of one domain: its environment, network and workloads.

    Arguments:
        env: the domain environment.
        net: the dual-zone policy network.
        assignment: the architecture chosen for the domain.
        train_apps: training applications.
        eval_apps: evaluation applications.
        lr: learning rate of local training.
        gamma: discount factor.
        max_grad_norm: global gradient norm clip, `None` disables it.
        seed: seed of the training and distillation samplers.
    """

    def __init__(  # pylint: disable=too-many-arguments
        self,
        env: SchedulingEnv,
        net: DualZoneNetwork,
        assignment: ArchitectureAssignment,
        train_apps: Sequence[DagApplication],
        eval_apps: Sequence[DagApplication],
        lr: float,
        gamma: float,
        max_grad_norm: Optional[float],
        seed: int,
    ):
        self.env = env
        self.net = net
        self.assignment = assignment
        self.train_apps = list(train_apps)
        self.eval_apps = list(eval_apps)
        self.lr = lr
        self.gamma = gamma
        self.max_grad_norm = max_grad_norm
        self.seed = seed

        self.rng = np.random.default_rng(derive_seed(seed, env.domain_id, 4))
        self.kd_rng = np.random.default_rng(derive_seed(seed, env.domain_id, 3))
        self._cursor = 0
        self._references: Dict[int, WeightedCostParams] = {}

    @property
    def domain_id(self) -> int:
        """Domain of the agent."""
        return self.env.domain_id

    def next_apps(self, count: int) -> List[DagApplication]:
        """Takes the next training applications, cycling over the set."""
        apps = [
            self.train_apps[(self._cursor + i) % len(self.train_apps)] for i in range(count)
        ]
        self._cursor = (self._cursor + count) % len(self.train_apps)

        return apps

    def cost_of(self, app: DagApplication, record: AppRecord) -> float:
        """Reported weighted cost of a finished application."""
        if not record.success:
            return 1.0

        params = self._references.get(app.id)
        if params is None:
            params = reference_params(
                app, self.env.servers, self.env.topology, self.env.alpha_cost
            )
            self._references[app.id] = params

        return weighted_cost(record.completion_time_s, record.energy_j, params)

    def _stats(self, apps, rollouts, diagnostics=()) -> PhaseStats:
        done = [r.record for r in rollouts if r.record.success]

        return PhaseStats(
            completion_time_s=_mean([r.completion_time_s for r in done]),
            energy_j=_mean([r.energy_j for r in done]),
            weighted_cost=_mean([self.cost_of(a, r.record) for a, r in zip(apps, rollouts)]),
            reward=_mean([r.total_reward for r in rollouts]),
            policy_loss=_mean([d.policy_loss for d in diagnostics]),
            value_loss=_mean([d.value_loss for d in diagnostics]),
            cpu_util=_mean([x for r in done for x in r.cpu_samples]),
            ram_util=_mean([x for r in done for x in r.ram_samples]),
        )

    def train(self, apps: Sequence[DagApplication], epochs: int) -> PhaseStats:
        """Runs local actor-critic epochs, one update per application."""
        scheduled = []
        rollouts = []
        diagnostics = []

        for _ in range(epochs):
            for app in apps:
                result = rollout(self.env, self.net, app, self.gamma, self.rng)
                diagnostics.append(
                    a2c_update(
                        self.net,
                        result.trajectory,
                        self.lr,
                        self.env.n_servers,
                        self.max_grad_norm,
                    )
                )
                scheduled.append(app)
                rollouts.append(result)

        return self._stats(scheduled, rollouts, diagnostics)

    def evaluate(self, apps: Optional[Sequence[DagApplication]] = None) -> PhaseStats:
        """Replays applications greedily in a fresh environment; neither the
        network nor the training environment changes."""
        apps = self.eval_apps if apps is None else list(apps)
        env = SchedulingEnv(self.env.topology, self.domain_id, self.env.layout, self.env.alpha_cost)
        rollouts = [rollout(env, self.net, app, self.gamma) for app in apps]

        return self._stats(apps, rollouts)

    def collect_states(self, episode: int) -> np.ndarray:  # pylint: disable=unused-argument
        """Encoded states of a sampled episode on a copy of the environment."""
        app = self.train_apps[int(self.kd_rng.integers(len(self.train_apps)))]
        result = rollout(self.env.snapshot(), self.net, app, self.gamma, self.kd_rng)

        return np.stack(result.trajectory.states)

    def probe(self, lr: float, rounds: int, apps_per_round: int, epochs: int) -> float:
        """Greedy training cost reached by a clone trained with `lr`."""
        clone = DomainAgent(
            env=SchedulingEnv(
                self.env.topology,
                self.domain_id,
                self.env.layout,
                self.env.alpha_cost,
                history_limit=self.env.history.maxlen,
            ),
            net=self.net.copy(),
            assignment=self.assignment,
            train_apps=self.train_apps,
            eval_apps=self.eval_apps,
            lr=lr,
            gamma=self.gamma,
            max_grad_norm=self.max_grad_norm,
            seed=self.seed,
        )
        for _ in range(rounds):
            clone.train(clone.next_apps(apps_per_round), epochs)

        return clone.evaluate(self.train_apps).weighted_cost


def _record(round_idx: int, domain_id: int, phase: Phase, stats: PhaseStats, kd_loss=math.nan):
    return MetricsRecord(
        round=round_idx,
        domain=domain_id,
        phase=phase,
        completion_time_s=stats.completion_time_s,
        energy_j=stats.energy_j,
        weighted_cost=stats.weighted_cost,
        reward=stats.reward,
        policy_loss=stats.policy_loss,
        value_loss=stats.value_loss,
        kd_loss=kd_loss,
    )


class Experiment:  # pylint: disable=too-many-instance-attributes
    """An experiment over every domain of a context.

    Architectures are generated once at construction; `run()` then yields
    the metrics of every round.

    Arguments:
        ctx: the experiment context.
        plan: the experiment schedule.

    Raises:
        ConfigError: if adaptive architectures are requested for a single
            domain.
    """

    def __init__(self, ctx: Context, plan: ExperimentPlan):
        self.ctx = ctx
        self.plan = plan
        self.cluster_state: Optional[ClusterState] = None
        self.final_eval: Dict[int, PhaseStats] = {}
        self.counters: Dict[str, int] = {
            "aggregation_messages": 0,
            "distill_episodes": 0,
            "distill_rounds": 0,
            "evaluations": 0,
            "federated_rounds": 0,
            "reclusterings": 0,
        }

        config = ctx.config
        topology = ctx.topology
        domain_ids = sorted(d.id for d in topology.domains)
        self.bandwidths = {d: domain_bandwidth(topology, d) for d in domain_ids}

        agent_cfg = config.agent
        params = ArchParams(
            k_arch=agent_cfg.k_arch,
            depth_bounds=(agent_cfg.depth_min, agent_cfg.depth_max),
            width_bounds=(agent_cfg.width_min, agent_cfg.width_max),
            alpha_arch=agent_cfg.alpha_arch,
            weights=tuple(agent_cfg.resource_weights) or None,
            mode=agent_cfg.arch_mode,
        )

        with print_waiting("architecture generation"):
            vectors = [
                capability_vector(d, topology.domain_servers(d), self.bandwidths[d])
                for d in domain_ids
            ]
            try:
                generated = generate_architectures(
                    vectors,
                    params,
                    ctx.layout.width,
                    ctx.layout.max_servers,
                    [derive_seed(plan.seed, d, 2) for d in domain_ids],
                )

            except NotEnoughDomains as exc:
                raise ConfigError(str(exc)) from exc

        self.agents: Dict[int, DomainAgent] = {}
        for domain_id, (assignment, net) in zip(domain_ids, generated):
            train, evaluation = domain_workloads(config, domain_id, plan.seed)
            self.agents[domain_id] = DomainAgent(
                env=SchedulingEnv(
                    topology,
                    domain_id,
                    ctx.layout,
                    agent_cfg.alpha_cost,
                    history_limit=config.fed.window,
                ),
                net=net,
                assignment=assignment,
                train_apps=train,
                eval_apps=evaluation,
                lr=agent_cfg.lr,
                gamma=agent_cfg.gamma,
                max_grad_norm=agent_cfg.max_grad_norm or None,
                seed=plan.seed,
            )
            log(
                f"architecture domain={domain_id} type={assignment.arch_type} "
                f"depth={assignment.pers_depth} width={assignment.pers_width} "
                f"params={assignment.parameter_count}"
            )

        if agent_cfg.tune_lr:
            self._tune_learning_rates()

    def _tune_learning_rates(self):
        agent_cfg = self.ctx.config.agent

        for domain_id, agent in self.agents.items():
            with print_waiting(f"learning-rate probe domain={domain_id}"):
                costs = {
                    lr: agent.probe(
                        lr, agent_cfg.probe_rounds, self.plan.apps_per_round, self.plan.local_epochs
                    )
                    for lr in agent_cfg.lr_grid
                }
                # nan costs sort last
                agent.lr = min(
                    costs, key=lambda lr: (math.isnan(costs[lr]), np.nan_to_num(costs[lr]), lr)
                )
                log(f"learning rate domain={domain_id} lr={agent.lr}")

    @property
    def nets(self) -> Dict[int, DualZoneNetwork]:
        """Network of every domain."""
        return {d: a.net for d, a in self.agents.items()}

    @property
    def architectures(self) -> List[ArchitectureAssignment]:
        """Architecture of every domain, by domain id."""
        return [a.assignment for a in self.agents.values()]

    @property
    def learning_rates(self) -> Dict[int, float]:
        """Learning rate of every domain."""
        return {d: a.lr for d, a in self.agents.items()}

    @property
    def fed_params(self) -> FedParams:
        """Federation parameters of the configuration."""
        fed = self.ctx.config.fed
        return FedParams(
            epsilon=fed.epsilon,
            tau_drift=fed.tau_drift,
            clusters=fed.clusters,
            beta_fed=fed.beta_fed,
            window=fed.window,
            seed=self.plan.seed,
        )

    @property
    def distill_params(self) -> DistillParams:
        """Distillation parameters of the configuration."""
        kd = self.ctx.config.distill
        return DistillParams(
            tau_env=kd.tau_env,
            top_k=kd.top_k,
            tau_temp=kd.tau_temp,
            alpha_distill=kd.alpha_distill,
            beta_distill=kd.beta_distill,
            e_base=kd.e_base,
            lr=kd.lr,
        )

    def _local_phase(self) -> Dict[int, PhaseStats]:
        apps = {d: a.next_apps(self.plan.apps_per_round) for d, a in self.agents.items()}

        def _train(domain_id):
            return self.agents[domain_id].train(apps[domain_id], self.plan.local_epochs)

        ids = sorted(self.agents)
        if self.plan.workers > 1:
            with ThreadPoolExecutor(max_workers=self.plan.workers) as pool:
                return dict(zip(ids, pool.map(_train, ids)))

        return {d: _train(d) for d in ids}

    def _federated_phase(self, round_idx: int):
        with print_waiting("federated barrier"):
            outcome = federated_round(
                round_idx,
                self.nets,
                {d: a.env.history for d, a in self.agents.items()},
                self.bandwidths,
                self.cluster_state,
                self.fed_params,
            )

        self.cluster_state = outcome.state
        self.counters["federated_rounds"] += 1
        self.counters["aggregation_messages"] += outcome.messages
        self.counters["reclusterings"] += int(outcome.reclustered)
        success(
            f"federated barrier round={round_idx} messages={outcome.messages} "
            f"reclustered={outcome.reclustered}"
        )

    def _distill_phase(self, round_idx: int) -> Dict[int, float]:
        variant = self.plan.strategy.distill_variant
        if variant is None or self.cluster_state is None:
            return {}

        state = self.cluster_state
        types = {d: a.net.arch_type for d, a in self.agents.items()}
        params = self.distill_params
        kd_loss: Dict[int, float] = {}

        plans = {
            d: build_teacher_set(
                d,
                types,
                compatibilities(d, state) if d in state.standardized else {},
                params,
                variant,
            )
            for d in sorted(self.agents)
        }

        for _ in range(self.plan.kd_rounds):
            with print_waiting("distillation"):
                report = run_distillation(
                    round_idx,
                    self.nets,
                    plans,
                    lambda student, episode: self.agents[student].collect_states(episode),
                    {d: a.env.n_servers for d, a in self.agents.items()},
                    params,
                )

            self.counters["distill_rounds"] += 1
            self.counters["distill_episodes"] += report.episodes
            kd_loss.update(report.totals)
            success(f"distillation round={round_idx} episodes={report.episodes}")

        return kd_loss

    def _evaluate(self, round_idx: int) -> List[MetricsRecord]:
        with print_waiting("evaluation"):
            before = {d: parameter_checksum(n) for d, n in self.nets.items()}
            self.final_eval = {d: a.evaluate() for d, a in self.agents.items()}
            after = {d: parameter_checksum(n) for d, n in self.nets.items()}

        if before != after:
            raise RuntimeError("evaluation changed the network parameters")

        self.counters["evaluations"] += 1

        return [
            _record(round_idx, d, Phase.EVAL, stats) for d, stats in self.final_eval.items()
        ]

    def run(self) -> Iterator[MetricsRecord]:
        """Runs the experiment, yielding the records of every round as they
        are produced."""
        plan = self.plan

        for round_idx in range(1, plan.rounds + 1):
            with print_waiting(f"round {round_idx}"):
                stats = self._local_phase()
                kd_loss: Dict[int, float] = {}

                if plan.strategy.federates and round_idx % plan.fed_period == 0:
                    self._federated_phase(round_idx)
                    kd_loss = self._distill_phase(round_idx)

                for domain_id, domain_stats in stats.items():
                    yield _record(
                        round_idx,
                        domain_id,
                        Phase.TRAIN,
                        domain_stats,
                        kd_loss.get(domain_id, math.nan),
                    )

                if round_idx % plan.eval_period == 0 or round_idx == plan.rounds:
                    yield from self._evaluate(round_idx)

    @property
    def utilization(self) -> Dict[int, Dict[str, float]]:
        """Mean CPU and RAM utilization of the last evaluation."""
        return {
            d: {"cpu": s.cpu_util, "ram": s.ram_util} for d, s in self.final_eval.items()
        }

    @property
    def global_objectives(self) -> Dict[str, float]:
        """Sums over domains of the last evaluation's means."""
        stats = list(self.final_eval.values())
        return {
            "completion_time_s": float(sum(s.completion_time_s for s in stats)),
            "energy_j": float(sum(s.energy_j for s in stats)),
            "weighted_cost": float(sum(s.weighted_cost for s in stats)),
        }


@define(frozen=True, kw_only=True, eq=False)
class CompletedRun:
    """Outcome of `run_experiment`.

    Arguments:
        result: final evaluation summary.
        records: every metrics record, in emission order.
        experiment: the finished experiment, holding networks and counters.
        metrics_file: the CSV written, if any.
    """

    result: RunResult
    records: List[MetricsRecord]
    experiment: Experiment
    metrics_file: Optional[Path] = None


def run_experiment(
    ctx: Context, plan: ExperimentPlan, out_dir: Optional[Path | str] = None
) -> CompletedRun:
    """Runs an experiment, streaming its metrics to the output directory.

    If any step fails the exception propagates and the rows produced so far
    stay in the `.partial` metrics file.
    """
    experiment = Experiment(ctx, plan)
    strategy = plan.strategy.value
    n_domains = len(experiment.agents)
    records: List[MetricsRecord] = []

    def _tee():
        for record in experiment.run():
            records.append(record)
            yield record

    path = None
    if out_dir is None:
        for _ in _tee():
            pass
    else:
        path = write_metrics(_tee(), metrics_path(out_dir, strategy, n_domains))
        save_models(out_dir, strategy, experiment.nets)

    result = summarize_records(strategy, records)
    success(
        f"experiment completed strategy={strategy} domains={n_domains} "
        f"cost={result.weighted_cost:.4f}"
    )

    return CompletedRun(result=result, records=records, experiment=experiment, metrics_file=path)


def scale_domains(
    ctx: Context,
    plan: ExperimentPlan,
    points: Sequence[int],
    out_dir: Optional[Path | str] = None,
) -> List[CompletedRun]:
    """Runs the same templated experiment for every domain count."""
    runs = []
    for n_domains in points:
        with print_waiting(f"scale domains={n_domains}"):
            runs.append(run_experiment(with_domains(ctx, n_domains), plan, out_dir))

    return runs


@define(frozen=True, kw_only=True)
class AblationReport:
    """Comparison of the strategies over several seeds.

    Arguments:
        finals: final weighted cost per seed and strategy.
        ordering: whether the strategies are ordered from complete
            distillation to local training, per seed.
        median_improvement: median relative cost reduction of
            `fl-complete-kd` over `local-only`.
        gaps: relative cost gap between the smallest and the largest
            architecture type per seed, under `fl-complete-kd` and `fl-only`.
        gap_closed: whether `fl-complete-kd` keeps the gap within 25% and
            below `fl-only`, per seed.
        degradation: cost at the largest scale over the smallest, per seed
            and strategy; empty without scale points.
    """

    finals: Dict[int, Dict[str, float]] = field(factory=dict)
    ordering: Dict[int, bool] = field(factory=dict)
    median_improvement: float = math.nan
    gaps: Dict[int, Dict[str, float]] = field(factory=dict)
    gap_closed: Dict[int, bool] = field(factory=dict)
    degradation: Dict[int, Dict[str, float]] = field(factory=dict)


_ORDER = (
    LearningStrategy.FL_COMPLETE_KD,
    LearningStrategy.FL_BASIC_KD,
    LearningStrategy.FL_ONLY,
    LearningStrategy.LOCAL_ONLY,
)


def type_gap(run: CompletedRun) -> float:
    """Relative final cost gap between the smallest-type and the
    largest-type domain; ties go to the lowest domain id."""
    archs = run.experiment.architectures
    smallest = min(archs, key=lambda a: (a.arch_type, a.domain_id)).domain_id
    largest = min(archs, key=lambda a: (-a.arch_type, a.domain_id)).domain_id
    costs = run.result.domain_costs
    if costs[largest] <= 0:
        return 0.0 if costs[smallest] <= 0 else math.inf

    return abs(costs[smallest] - costs[largest]) / costs[largest]


def _ordered(costs: Mapping[str, float]) -> bool:
    values = [costs[s.value] for s in _ORDER]
    return all(a <= b for a, b in zip(values, values[1:]))


def run_ablation(
    ctx: Context,
    plan: ExperimentPlan,
    seeds: Sequence[int],
    points: Sequence[int] = (),
) -> AblationReport:
    """Runs every strategy on every seed and checks the expected orderings."""
    finals: Dict[int, Dict[str, float]] = {}
    gaps: Dict[int, Dict[str, float]] = {}
    degradation: Dict[int, Dict[str, float]] = {}

    for seed in seeds:
        runs = {}
        for strategy in _ORDER:
            with print_waiting(f"ablation seed={seed} strategy={strategy.value}"):
                runs[strategy] = run_experiment(ctx, evolve(plan, strategy=strategy, seed=seed))

        finals[seed] = {s.value: r.result.weighted_cost for s, r in runs.items()}
        gaps[seed] = {
            s.value: type_gap(runs[s])
            for s in (LearningStrategy.FL_COMPLETE_KD, LearningStrategy.FL_ONLY)
        }

        if len(points) >= 2:
            degradation[seed] = {}
            for strategy in (LearningStrategy.FL_COMPLETE_KD, LearningStrategy.LOCAL_ONLY):
                scaled = scale_domains(ctx, evolve(plan, strategy=strategy, seed=seed), points)
                small = min(scaled, key=lambda r: r.result.domains).result.weighted_cost
                large = max(scaled, key=lambda r: r.result.domains).result.weighted_cost
                degradation[seed][strategy.value] = large / small if small > 0 else math.inf

    improvements = [
        (c[LearningStrategy.LOCAL_ONLY.value] - c[LearningStrategy.FL_COMPLETE_KD.value])
        / c[LearningStrategy.LOCAL_ONLY.value]
        for c in finals.values()
        if c[LearningStrategy.LOCAL_ONLY.value] > 0
    ]

    complete = LearningStrategy.FL_COMPLETE_KD.value
    return AblationReport(
        finals=finals,
        ordering={seed: _ordered(costs) for seed, costs in finals.items()},
        median_improvement=statistics.median(improvements) if improvements else math.nan,
        gaps=gaps,
        gap_closed={
            seed: g[complete] <= 0.25 and g[complete] < g[LearningStrategy.FL_ONLY.value]
            for seed, g in gaps.items()
        },
        degradation=degradation,
    )
