import json
from pathlib import Path

import click
import pytest
from click.testing import CliRunner
from testfixtures import ShouldRaise, compare

from fedsched.__main__ import EXIT_CONFIG, EXIT_RUNTIME, RunConfig, cli, parse_args
from fedsched.core.metrics import HEADER
from fedsched.core.strategy import LearningStrategy

DESK = """
[topology]
domains = 3

[workload]
train_applications = 3
eval_applications = 2
min_tasks = 2
max_tasks = 4

[agent]
k_arch = 2
depth_min = 1
depth_max = 2
width_min = 4
width_max = 8

[fed]
t_fed = 2
window = 10

[distill]
e_base = 2

[experiment]
strategy = "fl-complete-kd"
rounds = 2
apps_per_round = 2
eval_period = 2
"""

BROKEN = """
[topology]
template = ""

[[topology.servers]]
id = 1
tier = "edge"
freq_mhz = 0.0
ram_gb = 8.0
cores = 4
power_compute_w = 20.0
power_transmit_w = 3.0

[[topology.groups]]
id = 0
servers = [1]
"""


@pytest.fixture
def desk(tmp_path) -> Path:
    path = tmp_path / "desk.toml"
    path.write_text(DESK)
    return path


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


def test_parse_args__defaults():
    compare(
        parse_args(["--config", "desk.toml"]),
        RunConfig(config_path=Path("desk.toml"), out_dir=Path("./runs")),
    )


def test_parse_args__every_flag():
    run_config = parse_args(
        [
            "-c",
            "desk.toml",
            "-o",
            "out",
            "--strategy",
            "fl-only",
            "--rounds",
            "30",
            "--seed",
            "7",
            "--scale",
            "3,6,9",
            "--set",
            "fed.t_fed=3",
            "--set",
            "agent.lr=0.003",
        ]
    )

    compare(run_config.strategy, LearningStrategy.FL_ONLY)
    compare((run_config.rounds, run_config.seed, run_config.scale), (30, 7, [3, 6, 9]))
    compare(run_config.overrides, ["fed.t_fed=3", "agent.lr=0.003"])
    compare(run_config.out_dir, Path("out"))


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["-c", "desk.toml", "--strategy", "bogus"],
        ["-c", "desk.toml", "--rounds", "0"],
        ["-c", "desk.toml", "--scale", "1,4"],
        ["-c", "desk.toml", "--scale", "a,b"],
        ["-c", "desk.toml", "--unknown"],
    ],
)
def test_parse_args__invalid_arguments_raise_UsageError(argv):
    with ShouldRaise(click.UsageError):
        parse_args(argv)


def test_run__unknown_strategy_is_a_usage_error(runner, desk):
    result = runner.invoke(cli, ["run", "-c", str(desk), "--strategy", "bogus"])

    compare(result.exit_code, 2)


def test_run__writes_metrics_models_and_summary(runner, desk, tmp_path):
    out = tmp_path / "out"

    result = runner.invoke(cli, ["run", "-c", str(desk), "-o", str(out), "--set", "fed.t_fed=1"])

    compare(result.exit_code, 0)
    metrics = out / "metrics__fl-complete-kd__n3.csv"
    compare(metrics.read_text().splitlines()[0], HEADER)
    assert (out / "models__fl-complete-kd__n3.npz").exists()
    summary = json.loads((out / "summary.json").read_text())
    compare(summary["config"]["fed"]["t_fed"], 1)
    compare(summary["counters"]["federated_rounds"], 2)
    compare([r["domains"] for r in summary["results"]], [3])
    compare(sorted(summary["learning_rates"]), ["0", "1", "2"])


def test_run__scale_runs_every_point(runner, desk, tmp_path):
    out = tmp_path / "out"

    result = runner.invoke(
        cli, ["run", "-c", str(desk), "-o", str(out), "--strategy", "local-only", "--scale", "2,3"]
    )

    compare(result.exit_code, 0)
    assert (out / "metrics__local-only__n2.csv").exists()
    assert (out / "metrics__local-only__n3.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    compare(sorted(summary["degradation"]), ["local-only"])


def test_run__unknown_override_exits_with_config_error(runner, desk, tmp_path):
    result = runner.invoke(
        cli, ["run", "-c", str(desk), "-o", str(tmp_path), "--set", "fed.t_feed=3"]
    )

    compare(result.exit_code, EXIT_CONFIG)


def test_run__missing_config_exits_with_config_error(runner, tmp_path):
    result = runner.invoke(cli, ["run", "-c", str(tmp_path / "missing.toml")])

    compare(result.exit_code, EXIT_CONFIG)


def test_run__violating_topology_exits_with_config_error(runner, tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text(BROKEN)

    result = runner.invoke(cli, ["run", "-c", str(path), "-o", str(tmp_path / "out")])

    compare(result.exit_code, EXIT_CONFIG)
    assert not (tmp_path / "out").exists()


def test_validate__admissible_topology_exits_zero(runner, desk):
    result = runner.invoke(cli, ["validate", "-c", str(desk)])

    compare(result.exit_code, 0)


def test_validate__violations_exit_with_config_error(runner, tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text(BROKEN)

    result = runner.invoke(cli, ["validate", "-c", str(path)])

    compare(result.exit_code, EXIT_CONFIG)
    assert "C3" in result.output


def test_summarize__prints_json_results(runner, desk, tmp_path):
    out = tmp_path / "out"
    runner.invoke(cli, ["run", "-c", str(desk), "-o", str(out), "--strategy", "fl-only"])

    result = runner.invoke(cli, ["summarize", str(out / "metrics__fl-only__n3.csv"), "--json"])

    compare(result.exit_code, 0)
    document = json.loads(result.output[result.output.index('{\n    "degradation"') :])
    compare(document["degradation"], {})
    compare([(r["strategy"], r["domains"]) for r in document["results"]], [("fl-only", 3)])


def test_summarize__malformed_file_exits_with_runtime_error(runner, tmp_path):
    path = tmp_path / "metrics__fl-only__n3.csv"
    path.write_text("round,domain\n")

    result = runner.invoke(cli, ["summarize", str(path)])

    compare(result.exit_code, EXIT_RUNTIME)
