"""Manages the files produced by a run."""

import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
from attrs import define, field
from cattrs import unstructure

from fedsched.core.archgen import ArchitectureAssignment
from fedsched.core.config import Config
from fedsched.core.metrics import RunResult
from fedsched.core.network import DualZoneNetwork, Zone, serialize_zone

__all__ = [
    "RunSummary",
    "init_output",
    "load_summary",
    "metrics_path",
    "models_path",
    "save_models",
    "save_summary",
    "summary_path",
]


def init_output(out_dir: Path | str) -> Path:
    """Creates the output directory if missing.

    Arguments:
        out_dir: directory receiving every file of the run.

    Returns:
        Path to the output directory.
    """
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)

    return path


def metrics_path(out_dir: Path | str, strategy: str, n_domains: int) -> Path:
    """Gets the path of the metrics CSV of a run.

    Arguments:
        out_dir: output directory.
        strategy: name of the learning strategy.
        n_domains: number of domains of the run.

    Returns:
        Path to the metrics file.
    """
    return Path(out_dir).joinpath(f"metrics__{strategy}__n{n_domains}.csv")


def models_path(out_dir: Path | str, strategy: str, n_domains: int) -> Path:
    """Gets the path of the final model parameters of a run."""
    return Path(out_dir).joinpath(f"models__{strategy}__n{n_domains}.npz")


def summary_path(out_dir: Path | str) -> Path:
    """Gets the path of the JSON summary."""
    return Path(out_dir).joinpath("summary.json")


@define(frozen=True, kw_only=True)
class RunSummary:
    """Everything reported about a run.

    Arguments:
        config: the effective configuration.
        results: final evaluation of every run, sorted by weighted cost.
        degradation: cost at the largest scale over the smallest, per
            strategy.
        architectures: architecture of every domain of the last run.
        utilization: mean CPU and RAM utilization of every domain in the
            final evaluation.
        global_objectives: sums over domains of the final completion time,
            energy and weighted cost.
        counters: mechanism counters of the last run.
        learning_rates: learning rate of every domain.
    """

    config: Config
    results: List[RunResult] = field(factory=list)
    degradation: Dict[str, float] = field(factory=dict)
    architectures: List[ArchitectureAssignment] = field(factory=list)
    utilization: Dict[int, Dict[str, float]] = field(factory=dict)
    global_objectives: Dict[str, float] = field(factory=dict)
    counters: Dict[str, int] = field(factory=dict)
    learning_rates: Dict[int, float] = field(factory=dict)


def save_summary(out_dir: Path | str, summary: Any) -> Path:
    """Persists a summary as indented JSON with sorted keys.

    Arguments:
        out_dir: output directory.
        summary: an attrs summary, unstructured before encoding.
    """
    path = summary_path(out_dir)

    with open(path, "w", encoding="utf-8") as summary_file:
        encoded = unstructure(summary)
        summary_file.write(json.dumps(encoded, indent=4, sort_keys=True))

    return path


def load_summary(out_dir: Path | str) -> Optional[Dict[str, Any]]:
    """Loads the JSON summary of a run.

    Returns:
        The decoded summary if present. Otherwise, returns `None`.
    """
    try:
        with open(summary_path(out_dir), encoding="utf-8") as summary_file:
            return json.loads(summary_file.read())

    except FileNotFoundError:
        return None


def save_models(
    out_dir: Path | str, strategy: str, nets: Mapping[int, DualZoneNetwork]
) -> Path:
    """Stores the flat zone records of every domain's network.

    Keys are `d<domain>__shared` and `d<domain>__personal`.
    """
    path = models_path(out_dir, strategy, len(nets))
    arrays = {}

    for domain_id in sorted(nets):
        for zone in Zone:
            arrays[f"d{domain_id}__{zone.value}"] = serialize_zone(nets[domain_id], zone).values

    np.savez(path, **arrays)

    return path
