"""Metrics records, their CSV sink and post-hoc summaries."""
import enum
import math
import os
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from attrs import define, field
from rich.table import Table

__all__ = [
    "HEADER",
    "MetricsParseError",
    "MetricsRecord",
    "MetricsWriteError",
    "Phase",
    "RunResult",
    "convergence_round",
    "degradation_ratios",
    "metrics_table",
    "parse_metrics_name",
    "partial_path",
    "read_metrics",
    "summarize_records",
    "write_metrics",
]

HEADER = (
    "round,domain,phase,completion_time_s,energy_j,weighted_cost,reward,"
    "policy_loss,value_loss,kd_loss"
)

_NAME_RE = re.compile(r"^metrics__(?P<strategy>[a-z-]+)__n(?P<domains>\d+)$")


@enum.unique
class Phase(enum.Enum):
    """Experiment phase that produced a record."""

    TRAIN = "train"
    EVAL = "eval"


@define(frozen=True, kw_only=True)
class MetricsRecord:
    """Metrics of one domain in one round and phase.

    Costs are means over the applications scheduled in the phase; losses are
    `nan` when no update happened.
    """

    round: int
    domain: int
    phase: Phase
    completion_time_s: float
    energy_j: float
    weighted_cost: float
    reward: float
    policy_loss: float = math.nan
    value_loss: float = math.nan
    kd_loss: float = math.nan


class MetricsWriteError(OSError):
    """Raised when the metrics file cannot be written; the rows written so far
    are left in the `.partial` file."""

    def __init__(self, path: Path, reason: str) -> None:
        super().__init__(str(path), reason)

        self.path = path
        self.reason = reason

    def __str__(self):
        return f"cannot write metrics to {self.path}: {self.reason}"


class MetricsParseError(ValueError):
    """Raised when a metrics file is malformed."""

    def __init__(self, path: Path, line: int, reason: str) -> None:
        super().__init__(str(path), line, reason)

        self.path = path
        self.line = line
        self.reason = reason

    def __str__(self):
        return f"{self.path}:{self.line}: {self.reason}"


def _row(record: MetricsRecord) -> str:
    return ",".join(
        [
            str(record.round),
            str(record.domain),
            record.phase.value,
            repr(float(record.completion_time_s)),
            repr(float(record.energy_j)),
            repr(float(record.weighted_cost)),
            repr(float(record.reward)),
            repr(float(record.policy_loss)),
            repr(float(record.value_loss)),
            repr(float(record.kd_loss)),
        ]
    )


def partial_path(path: Path) -> Path:
    """Path of the file receiving rows before the write completes."""
    return path.with_name(path.name + ".partial")


def write_metrics(records: Iterable[MetricsRecord], path: Path | str) -> Path:
    """Writes records as CSV with LF line endings.

    Rows go to `<path>.partial`, renamed to `path` once the stream is
    exhausted; if the stream or the disk fails, the partial file stays.

    Raises:
        MetricsWriteError: on I/O failures.
    """
    path = Path(path)
    partial = partial_path(path)

    try:
        with open(partial, "w", encoding="utf-8", newline="\n") as metrics_file:
            metrics_file.write(HEADER + "\n")
            metrics_file.flush()

            for record in records:
                metrics_file.write(_row(record) + "\n")
                metrics_file.flush()

        os.replace(partial, path)

    except OSError as exc:
        raise MetricsWriteError(path, str(exc)) from exc

    return path


def read_metrics(path: Path | str) -> List[MetricsRecord]:
    """Reads a metrics CSV.

    Raises:
        MetricsParseError: with the offending line number.
    """
    path = Path(path)
    records = []

    with open(path, encoding="utf-8", newline="") as metrics_file:
        lines = metrics_file.read().split("\n")

    if lines and lines[-1] == "":
        lines.pop()

    if not lines or lines[0] != HEADER:
        raise MetricsParseError(path, 1, "unexpected header")

    for number, line in enumerate(lines[1:], start=2):
        cols = line.split(",")
        if len(cols) != 10:
            raise MetricsParseError(path, number, f"expected 10 columns, got {len(cols)}")

        try:
            records.append(
                MetricsRecord(
                    round=int(cols[0]),
                    domain=int(cols[1]),
                    phase=Phase(cols[2]),
                    completion_time_s=float(cols[3]),
                    energy_j=float(cols[4]),
                    weighted_cost=float(cols[5]),
                    reward=float(cols[6]),
                    policy_loss=float(cols[7]),
                    value_loss=float(cols[8]),
                    kd_loss=float(cols[9]),
                )
            )

        except ValueError as exc:
            raise MetricsParseError(path, number, str(exc)) from exc

    return records


def convergence_round(
    series: Sequence[Tuple[int, float]], window: int = 10, tolerance: float = 0.02
) -> Optional[int]:
    """First round whose forward moving mean is within `tolerance` of the
    final value, the final value being the mean of the last `window` points.

    Arguments:
        series: `(round, value)` pairs in round order.
    """
    if not series:
        return None

    values = np.array([v for _, v in series], dtype=np.float64)
    final = float(values[-window:].mean())

    for idx, (round_idx, _) in enumerate(series):
        mean = float(values[idx : idx + window].mean())
        if abs(mean - final) <= tolerance * max(abs(final), 1e-12):
            return round_idx

    return series[-1][0]


def _mean(values: Iterable[float]) -> float:
    finite = [v for v in values if not math.isnan(v)]
    return float(np.mean(finite)) if finite else math.nan


@define(frozen=True, kw_only=True)
class RunResult:
    """Summary of one metrics stream.

    Arguments:
        strategy: strategy of the run.
        domains: number of domains.
        final_round: round of the last evaluation phase.
        completion_time_s: final mean completion time.
        energy_j: final mean energy.
        weighted_cost: final mean weighted cost.
        convergence_round: round the training cost settled.
        domain_costs: final weighted cost of every domain.
    """

    strategy: str
    domains: int
    final_round: int
    completion_time_s: float
    energy_j: float
    weighted_cost: float
    convergence_round: Optional[int]
    domain_costs: Dict[int, float] = field(factory=dict)


def _round_means(records: Sequence[MetricsRecord], phase: Phase) -> List[Tuple[int, float]]:
    rounds: Dict[int, List[float]] = {}
    for record in records:
        if record.phase is phase:
            rounds.setdefault(record.round, []).append(record.weighted_cost)

    return [(r, _mean(costs)) for r, costs in sorted(rounds.items())]


def summarize_records(strategy: str, records: Sequence[MetricsRecord]) -> RunResult:
    """Final evaluation means and convergence round of a run."""
    evals = [r for r in records if r.phase is Phase.EVAL]
    if not evals:
        return RunResult(
            strategy=strategy,
            domains=len({r.domain for r in records}),
            final_round=0,
            completion_time_s=math.nan,
            energy_j=math.nan,
            weighted_cost=math.nan,
            convergence_round=None,
        )

    final_round = max(r.round for r in evals)
    final = sorted((r for r in evals if r.round == final_round), key=lambda r: r.domain)

    series = _round_means(records, Phase.TRAIN) or _round_means(records, Phase.EVAL)

    return RunResult(
        strategy=strategy,
        domains=len({r.domain for r in records}),
        final_round=final_round,
        completion_time_s=_mean(r.completion_time_s for r in final),
        energy_j=_mean(r.energy_j for r in final),
        weighted_cost=_mean(r.weighted_cost for r in final),
        convergence_round=convergence_round(series),
        domain_costs={r.domain: r.weighted_cost for r in final},
    )


def degradation_ratios(results: Sequence[RunResult]) -> Dict[str, float]:
    """Final cost at the largest scale over the cost at the smallest scale,
    per strategy with at least two scale points."""
    by_strategy: Dict[str, List[RunResult]] = {}
    for result in results:
        by_strategy.setdefault(result.strategy, []).append(result)

    ratios = {}
    for strategy, runs in sorted(by_strategy.items()):
        if len({r.domains for r in runs}) < 2:
            continue

        small = min(runs, key=lambda r: r.domains)
        large = max(runs, key=lambda r: r.domains)
        ratios[strategy] = (
            large.weighted_cost / small.weighted_cost if small.weighted_cost > 0 else math.inf
        )

    return ratios


def parse_metrics_name(path: Path | str) -> Tuple[str, Optional[int]]:
    """Strategy and domain count encoded in a metrics file name; unknown
    names yield the file stem."""
    stem = Path(path).name.removesuffix(".csv")
    match = _NAME_RE.match(stem)
    if match is None:
        return stem, None

    return match["strategy"], int(match["domains"])


def _cost_key(result: RunResult):
    nan = math.isnan(result.weighted_cost)
    return (nan, 0.0 if nan else result.weighted_cost, result.strategy, result.domains)


def metrics_table(results: Sequence[RunResult], title: str = "Summary") -> Table:
    """Renders run results sorted by final weighted cost, ascending."""
    table = Table(title=title)
    table.add_column("Strategy", justify="left", no_wrap=True)
    table.add_column("Domains", justify="right")
    table.add_column("Weighted cost", justify="right")
    table.add_column("Completion time (s)", justify="right")
    table.add_column("Energy (J)", justify="right")
    table.add_column("Converged at", justify="right")

    for result in sorted(results, key=_cost_key):
        table.add_row(
            result.strategy,
            str(result.domains),
            f"{result.weighted_cost:.4f}",
            f"{result.completion_time_s:.3f}",
            f"{result.energy_j:.3f}",
            "" if result.convergence_round is None else str(result.convergence_round),
        )

    return table
