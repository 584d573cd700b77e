import itertools
import math

import networkx as nx
import numpy as np
import pytest
from testfixtures import ShouldRaise, compare

from fedsched.core.cost import (
    RoutingError,
    RunningBounds,
    SchedulingConfig,
    WeightedCostParams,
    application_completion_time,
    application_energy,
    check_constraints,
    communication_latency,
    data_transfer_time,
    earliest_start_times,
    processing_duration,
    ram_fits,
    reference_params,
    task_completion_time,
    task_energy,
    weighted_cost,
)
from fedsched.core.dag import DagApplication, TaskNode
from fedsched.core.topology import Domain, NetworkLink, Server, Tier, Topology


def _server(server_id, freq_mhz, power_compute_w, power_transmit_w, ram_gb=4.0):
    return Server(
        id=server_id,
        tier=Tier.EDGE,
        freq_mhz=freq_mhz,
        ram_gb=ram_gb,
        cores=4,
        power_compute_w=power_compute_w,
        power_transmit_w=power_transmit_w,
    )


@pytest.fixture
def topology() -> Topology:
    return Topology(
        servers=[_server(1, 1000.0, 10.0, 2.0), _server(2, 2000.0, 20.0, 4.0)],
        links=[NetworkLink(endpoints=(1, 2), propagation_ms=10.0, bandwidth_bps=8e6)],
        domains=[Domain(id=0, servers=[1, 2])],
    )


@pytest.fixture
def chain() -> DagApplication:
    return DagApplication(
        id=7,
        tasks=[
            TaskNode(app_id=7, task_id=0, cpu_cycles=1e9, ram_gb=1.0, out_data_bytes={1: 1e6}),
            TaskNode(app_id=7, task_id=1, cpu_cycles=2e9, ram_gb=1.0),
        ],
        edges=[(0, 1)],
    )


def _config(app, servers, domain_id=0):
    return SchedulingConfig(
        assignments={(app.id, tid): (sid, domain_id) for tid, sid in zip(app.task_ids, servers)}
    )


def test_processing_duration__cycles_over_frequency(chain, topology):
    compare(processing_duration(chain.task(0), topology.server(1)), 1.0)


def test_data_transfer_time__bytes_to_bits_over_bandwidth(chain, topology):
    compare(data_transfer_time(chain.task(0), 1, 1, 2, topology), 1.0)
    compare(data_transfer_time(chain.task(0), 1, 2, 2, topology), 0.0)


def test_data_transfer_time__unlinked_servers_raise_RoutingError(chain, topology):
    with ShouldRaise(RoutingError) as exc:
        data_transfer_time(chain.task(0), 1, 1, 3, topology)

    compare((exc.raised.src, exc.raised.dst), (1, 3))


def test_communication_latency__entry_task_is_zero(chain, topology):
    compare(communication_latency(chain, 0, _config(chain, [1, 2]), topology), 0.0)


def test_task_completion_time__includes_transfer_and_propagation(chain, topology):
    tct = task_completion_time(chain, 1, _config(chain, [1, 2]), topology)

    assert math.isclose(tct, 2.01, rel_tol=1e-12)


def test_application_completion_time__two_server_chain(chain, topology):
    ct = application_completion_time(chain, _config(chain, [1, 2]), topology)

    assert math.isclose(ct, 3.01, rel_tol=1e-12)


def test_application_completion_time__same_server_has_no_communication(chain, topology):
    compare(application_completion_time(chain, _config(chain, [1, 1]), topology), 3.0)


def test_task_energy__sender_pays_transmission(chain, topology):
    config = _config(chain, [1, 2])

    compare(task_energy(chain, 0, config, topology), 12.0)
    compare(task_energy(chain, 1, config, topology), 20.0)
    compare(application_energy(chain, config, topology), 32.0)


def test_task_energy__terminal_task_has_no_transmission(chain, topology):
    compare(task_energy(chain, 1, _config(chain, [1, 1]), topology), 20.0)


def test_weighted_cost__midpoint_of_both_ranges():
    params = WeightedCostParams(alpha_cost=0.5, ct_min=1.0, ct_max=3.0, e_min=10.0, e_max=30.0)

    compare(weighted_cost(2.0, 20.0, params), 0.5)


def test_weighted_cost__terms_are_clamped_to_unit_interval():
    params = WeightedCostParams(alpha_cost=0.25, ct_min=1.0, ct_max=3.0, e_min=10.0, e_max=30.0)

    compare(weighted_cost(10.0, 0.0, params), 0.25)
    compare(weighted_cost(0.0, 100.0, params), 0.75)


def test_weighted_cost__degenerate_range_contributes_zero():
    params = WeightedCostParams(alpha_cost=0.5, ct_min=2.0, ct_max=2.0, e_min=1.0, e_max=3.0)

    compare(weighted_cost(2.0, 3.0, params), 0.5)


def test_running_bounds__observations_widen_bounds():
    bounds = RunningBounds()
    compare(bounds.params(0.5), WeightedCostParams(alpha_cost=0.5))

    bounds.observe(2.0, 5.0)
    bounds.observe(1.0, 9.0)
    copy = bounds.copy()
    bounds.observe(4.0, 1.0)

    compare(
        copy.params(0.3),
        WeightedCostParams(alpha_cost=0.3, ct_min=1.0, ct_max=2.0, e_min=5.0, e_max=9.0),
    )
    compare(
        bounds.params(0.3),
        WeightedCostParams(alpha_cost=0.3, ct_min=1.0, ct_max=4.0, e_min=1.0, e_max=9.0),
    )


def test_reference_params__spans_single_server_placements(chain, topology):
    params = reference_params(chain, list(topology.servers), topology, 0.5)

    compare(params.ct_min, 1.5)
    compare(params.ct_max, 3.0)
    compare(params.e_min, 30.0)
    compare(params.e_max, 30.0)


@pytest.mark.parametrize("load,fits", [(3.9, True), (4.0, False), (4.1, False)])
def test_ram_fits__load_must_stay_below_capacity(load, fits):
    compare(ram_fits(load, 4.0), fits)


def test_earliest_start_times__successor_waits_for_data(chain, topology):
    starts = earliest_start_times(chain, _config(chain, [1, 2]), topology)

    compare(starts[0], 0.0)
    assert math.isclose(starts[1], 2.01, rel_tol=1e-12)


def test_check_constraints__valid_placement_passes(chain, topology):
    report = check_constraints([chain], _config(chain, [1, 2]), topology, topology.domains, 0.5)

    compare(report.ok, True)
    compare(sorted(report.results), ["C1", "C2", "C3", "C4", "C5", "C6", "DOMAIN", "ROUTE"])


def test_check_constraints__missing_placement_fails_c1(chain, topology):
    config = SchedulingConfig(assignments={(7, 0): (1, 0)})

    report = check_constraints([chain], config, topology, topology.domains, 0.5)

    compare(report.results["C1"].passed, False)
    compare(report.results["C4"].witnesses, ["incomplete placement"])


def test_check_constraints__memory_at_capacity_fails_c4(topology):
    app = DagApplication(
        id=1,
        tasks=[
            TaskNode(app_id=1, task_id=0, cpu_cycles=1e9, ram_gb=2.0),
            TaskNode(app_id=1, task_id=1, cpu_cycles=1e9, ram_gb=2.0),
        ],
        edges=[],
    )

    report = check_constraints([app], _config(app, [1, 1]), topology, topology.domains, 0.5)

    compare(report.results["C4"].passed, False)
    compare(report.results["C1"].passed, True)


def test_check_constraints__early_start_fails_c5(chain, topology):
    report = check_constraints(
        [chain],
        _config(chain, [1, 2]),
        topology,
        topology.domains,
        0.5,
        start_times={(7, 0): 0.0, (7, 1): 1.5},
    )

    compare(report.results["C5"].passed, False)


def test_check_constraints__server_outside_domain_fails_domain(chain, topology):
    domains = [Domain(id=0, servers=[1]), Domain(id=1, servers=[2])]

    report = check_constraints([chain], _config(chain, [1, 2]), topology, domains, 0.5)

    compare(report.results["DOMAIN"].passed, False)
    compare(len(report.results["DOMAIN"].witnesses), 1)


def test_check_constraints__unrouted_dependency_fails_route(chain):
    topology = Topology(
        servers=[_server(1, 1000.0, 10.0, 2.0), _server(2, 2000.0, 20.0, 4.0)],
        links=[],
        domains=[Domain(id=0, servers=[1]), Domain(id=1, servers=[2])],
    )
    config = SchedulingConfig(assignments={(7, 0): (1, 0), (7, 1): (2, 1)})

    report = check_constraints([chain], config, topology, topology.domains, 0.5)

    compare(report.results["ROUTE"].passed, False)


def test_check_constraints__alpha_outside_unit_interval_fails_c6(chain, topology):
    report = check_constraints([chain], _config(chain, [1, 2]), topology, topology.domains, 1.5)

    compare(report.results["C6"].passed, False)


def _random_fixture(rng):
    n_servers = int(rng.integers(1, 5))
    servers = [
        _server(
            sid,
            float(rng.uniform(500, 3000)),
            float(rng.uniform(1, 100)),
            float(rng.uniform(0.5, 10)),
        )
        for sid in range(n_servers)
    ]
    links = [
        NetworkLink(
            endpoints=(a, b),
            propagation_ms=float(rng.uniform(1, 25)),
            bandwidth_bps=float(rng.uniform(8e7, 2e8)),
        )
        for a, b in itertools.combinations(range(n_servers), 2)
    ]
    topology = Topology(
        servers=servers, links=links, domains=[Domain(id=0, servers=range(n_servers))]
    )

    n_tasks = int(rng.integers(1, 9))
    edges = {
        (a, b) for a, b in itertools.combinations(range(n_tasks), 2) if rng.random() < 0.35
    }
    app = DagApplication(
        id=3,
        tasks=[
            TaskNode(
                app_id=3,
                task_id=t,
                cpu_cycles=float(rng.uniform(1e8, 4e9)),
                ram_gb=0.1,
                out_data_bytes={
                    s: float(rng.uniform(1e5, 2e7)) for p, s in sorted(edges) if p == t
                },
            )
            for t in range(n_tasks)
        ],
        edges=edges,
    )
    config = _config(app, [int(rng.integers(0, n_servers)) for _ in range(n_tasks)])

    return app, config, topology


def _oracle(app, config, topology):
    def tct(tid):
        server = topology.server(config.server_of(app.id, tid))
        latency = 0.0
        for pred, succ in app.edges:
            if succ != tid:
                continue
            src = config.server_of(app.id, pred)
            if src != server.id:
                link = topology.link(src, server.id)
                latency = max(
                    latency,
                    app.task(pred).out_data_bytes[tid] * 8 / link.bandwidth_bps
                    + link.propagation_ms / 1000,
                )
        return latency + app.task(tid).cpu_cycles / (server.freq_mhz * 1e6)

    graph = app.graph()
    paths = [[t] for t in graph if graph.in_degree(t) == 0 and graph.out_degree(t) == 0]
    for src in [t for t in graph if graph.in_degree(t) == 0]:
        for dst in [t for t in graph if graph.out_degree(t) == 0]:
            paths.extend(nx.all_simple_paths(graph, src, dst))
    ct = max(sum(tct(t) for t in path) for path in paths)

    energy = 0.0
    for task in app.tasks:
        server = topology.server(config.server_of(app.id, task.task_id))
        energy += task.cpu_cycles / (server.freq_mhz * 1e6) * server.power_compute_w
        for succ, volume in task.out_data_bytes.items():
            dst = config.server_of(app.id, succ)
            if dst != server.id:
                link = topology.link(server.id, dst)
                energy += volume * 8 / link.bandwidth_bps * server.power_transmit_w

    return ct, energy


def test_application_cost__matches_path_enumeration_oracle():
    rng = np.random.default_rng(2024)

    for _ in range(50):
        app, config, topology = _random_fixture(rng)
        ct, energy = _oracle(app, config, topology)

        assert math.isclose(
            application_completion_time(app, config, topology), ct, rel_tol=1e-12
        )
        assert math.isclose(application_energy(app, config, topology), energy, rel_tol=1e-12)


def test_check_constraints__partial_start_times_fail_c5(chain, topology):
    report = check_constraints(
        [chain], _config(chain, [1, 2]), topology, topology.domains, 0.5, start_times={(7, 0): 0.0}
    )

    compare(report.results["C5"].passed, False)
    compare(report.results["C5"].witnesses, ["task (7, 1) has no start time"])


def test_weighted_cost__never_decreases_with_time_or_energy():
    rng = np.random.default_rng(8)

    for _ in range(200):
        ct_min, ct_max = sorted(rng.uniform(0.0, 10.0, size=2))
        e_min, e_max = sorted(rng.uniform(0.0, 100.0, size=2))
        params = WeightedCostParams(
            alpha_cost=float(rng.uniform()),
            ct_min=float(ct_min),
            ct_max=float(ct_max),
            e_min=float(e_min),
            e_max=float(e_max),
        )
        ct, e = rng.uniform(0.0, 12.0), rng.uniform(0.0, 120.0)
        d_ct, d_e = rng.uniform(0.0, 3.0), rng.uniform(0.0, 30.0)

        base = weighted_cost(ct, e, params)
        assert weighted_cost(ct + d_ct, e, params) >= base
        assert weighted_cost(ct, e + d_e, params) >= base
        assert 0.0 <= base <= 1.0


def test_task_completion_time__never_below_processing_duration():
    rng = np.random.default_rng(99)

    for _ in range(50):
        app, config, topology = _random_fixture(rng)

        for tid in app.task_ids:
            server = topology.server(config.server_of(app.id, tid))
            assert task_completion_time(app, tid, config, topology) >= processing_duration(
                app.task(tid), server
            )
