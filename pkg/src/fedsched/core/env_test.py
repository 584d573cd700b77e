import math

import numpy as np
import pytest
from attrs import evolve
from testfixtures import ShouldRaise, compare

from fedsched.core.dag import DagApplication, TaskNode
from fedsched.core.env import (
    PENALTY,
    ActionChoice,
    EncodingLayout,
    EndOfEpisode,
    InvalidAction,
    LayoutError,
    Outcome,
    SchedulingEnv,
    encode_state,
)
from fedsched.core.topology import Domain, NetworkLink, Server, Tier, Topology


def _server(server_id, tier, freq_mhz, ram_gb):
    return Server(
        id=server_id,
        tier=tier,
        freq_mhz=freq_mhz,
        ram_gb=ram_gb,
        cores=2,
        power_compute_w=10.0,
        power_transmit_w=2.0,
        utilization=0.1,
    )


@pytest.fixture
def topology() -> Topology:
    return Topology(
        servers=[_server(1, Tier.IOT, 1000.0, 4.0), _server(2, Tier.CLOUD, 2000.0, 8.0)],
        links=[NetworkLink(endpoints=(1, 2), propagation_ms=10.0, bandwidth_bps=8e6)],
        domains=[Domain(id=0, servers=[1, 2])],
    )


@pytest.fixture
def layout() -> EncodingLayout:
    return EncodingLayout(
        max_servers=3,
        freq_max_mhz=2000.0,
        ram_max_gb=8.0,
        bandwidth_max_bps=8e6,
        cycles_max=4e9,
        task_ram_max_gb=2.0,
        data_max_bytes=2e6,
        max_tasks=4,
        max_degree=3,
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
        arrival_s=3.0,
    )


@pytest.fixture
def env(topology, layout) -> SchedulingEnv:
    return SchedulingEnv(topology, 0, layout, alpha_cost=0.5)


def test_encoding_layout__width_counts_slots_task_and_queue(layout):
    compare(layout.width, 3 * 10 + 7 + 2)


def test_observe__entry_task_has_no_pending_predecessors(env, chain):
    env.reset(chain)
    obs = env.observe()

    compare(obs.task.task_id, 0)
    compare(obs.task.successors, (1,))
    compare(obs.task.out_data_bytes, 1e6)
    compare(obs.queue.waiting, 1)
    compare(obs.queue.pred_complete_fraction, 1.0)
    compare([s.id for s in obs.servers], [1, 2])
    compare([s.available_ram_gb for s in obs.servers], [4.0, 8.0])


def test_encode_state__fills_populated_slots_only(env, chain, layout):
    env.reset(chain)
    vec = env.encode(env.observe())

    compare(vec.shape, (layout.width,))
    assert np.all((vec >= 0.0) & (vec <= 1.0))
    compare(vec[9], 1.0)
    compare(vec[19], 1.0)
    compare(vec[20:30].tolist(), [0.0] * 10)
    # iot one-hot of slot 0, cloud one-hot of slot 1
    compare(vec[4:7].tolist(), [0.0, 0.0, 1.0])
    compare(vec[14:17].tolist(), [1.0, 0.0, 0.0])
    compare(vec[11], 1.0)


def test_encode_state__too_many_servers_raise_LayoutError(env, chain, layout):
    env.reset(chain)

    with ShouldRaise(LayoutError) as exc:
        encode_state(env.observe(), evolve(layout, max_servers=1))

    compare((exc.raised.n_servers, exc.raised.max_servers), (2, 1))


def test_step__successor_observes_predecessor_data_location(env, chain):
    env.reset(chain)
    obs, reward = env.step(ActionChoice(server_index=0))

    compare(reward.outcome, Outcome.SUCCESS)
    compare(obs.task.task_id, 1)
    compare(obs.task.in_data_bytes, 1e6)
    compare([s.pred_data_fraction for s in obs.servers], [1.0, 0.0])
    compare(obs.servers[0].available_ram_gb, 3.0)
    assert math.isclose(obs.servers[0].cpu_util, 0.6)
    compare(obs.queue.assigned, ((0, 1),))


def test_step__completed_application_is_recorded(env, chain):
    env.reset(chain)
    env.step(ActionChoice(server_index=0))
    obs, reward = env.step(ActionChoice(server_index=1))

    compare(obs, None)
    compare(env.done, True)
    compare(reward.outcome, Outcome.SUCCESS)
    record = env.last_record
    compare(record.success, True)
    compare((record.n_tasks, record.n_edges, record.arrival_s), (2, 1, 3.0))
    assert math.isclose(record.completion_time_s, 3.01, rel_tol=1e-12)
    compare(record.energy_j, 22.0)
    compare(list(env.history), [record])


def test_step__first_observation_has_zero_cost_reward(env, chain):
    env.reset(chain)
    _, first = env.step(ActionChoice(server_index=0))

    compare(first.value, 0.0)


def test_step__final_task_cost_enters_the_running_bounds(env, chain):
    env.reset(chain)
    env.step(ActionChoice(server_index=0))
    _, last = env.step(ActionChoice(server_index=0))

    # task 1 is the costliest task seen so far, the application the only one
    compare(last.value, -0.5)
    bounds = env.task_bounds
    compare((bounds.ct_min, bounds.ct_max, bounds.e_min, bounds.e_max), (1.0, 2.0, 10.0, 20.0))


def test_step__final_reward_averages_task_and_application_costs(env, chain):
    env.reset(chain)
    env.step(ActionChoice(server_index=0))
    env.step(ActionChoice(server_index=1))

    env.reset(chain)
    env.step(ActionChoice(server_index=0))
    _, last = env.step(ActionChoice(server_index=0))

    task_cost = 0.5 * (2.0 - 1.0) / (2.01 - 1.0) + 0.5 * 1.0
    app_cost = 0.5 * 0.0 + 0.5 * 1.0
    assert math.isclose(last.value, -0.5 * (task_cost + app_cost), rel_tol=1e-9)


def test_step__rewards_stay_within_cost_range(env, chain):
    rng = np.random.default_rng(0)
    for _ in range(10):
        env.reset(chain)
        while not env.done:
            _, reward = env.step(ActionChoice(server_index=int(rng.integers(2))))
            assert -1.0 <= reward.value <= 0.0


def test_step__memory_overflow_fails_with_penalty(env, topology, layout):
    app = DagApplication(
        id=1, tasks=[TaskNode(app_id=1, task_id=0, cpu_cycles=1e9, ram_gb=4.0)], edges=[]
    )
    env.reset(app)

    obs, reward = env.step(ActionChoice(server_index=0))

    compare(obs, None)
    compare(reward.value, PENALTY)
    compare(reward.outcome, Outcome.FAILURE)
    compare(env.last_record.success, False)
    assert math.isnan(env.last_record.completion_time_s)


def test_step__resources_are_released_after_the_application(env, chain):
    env.reset(chain)
    env.step(ActionChoice(server_index=0))
    env.step(ActionChoice(server_index=0))

    env.reset(chain)
    obs = env.observe()

    compare(obs.servers[0].available_ram_gb, 4.0)
    compare(obs.servers[0].network_load, 0.0)


def test_step__out_of_range_action_raises_InvalidAction(env, chain):
    env.reset(chain)

    with ShouldRaise(InvalidAction) as exc:
        env.step(ActionChoice(server_index=2))

    compare(exc.raised.n_servers, 2)


def test_step__finished_episode_raises_EndOfEpisode(env, chain):
    env.reset(chain)
    env.step(ActionChoice(server_index=0))
    env.step(ActionChoice(server_index=0))

    with ShouldRaise(EndOfEpisode):
        env.step(ActionChoice(server_index=0))

    with ShouldRaise(EndOfEpisode):
        env.observe()


def test_snapshot__copy_does_not_touch_the_original(env, chain):
    env.reset(chain)
    env.step(ActionChoice(server_index=0))
    env.step(ActionChoice(server_index=1))
    before = env.app_bounds.params(0.5)

    other = env.snapshot()
    other.reset(chain)
    other.step(ActionChoice(server_index=1))
    other.step(ActionChoice(server_index=1))

    compare(len(env.history), 1)
    compare(len(other.history), 2)
    compare(env.app_bounds.params(0.5), before)


def test_history__keeps_only_the_latest_applications(topology, layout, chain):
    env = SchedulingEnv(topology, 0, layout, history_limit=3)

    for app_id in range(5):
        env.reset(evolve(chain, id=app_id))
        while not env.done:
            env.step(ActionChoice(server_index=0))

    compare([r.app_id for r in env.history], [2, 3, 4])
    compare([r.app_id for r in env.snapshot().history], [2, 3, 4])
    compare(env.snapshot().history.maxlen, 3)
