"""Episode rollouts of a domain's policy in its scheduling environment."""
from typing import Optional

import numpy as np
from attrs import define

from fedsched.core.dag import DagApplication
from fedsched.core.env import ActionChoice, AppRecord, SchedulingEnv
from fedsched.core.network import DualZoneNetwork, Trajectory, softmax_temperature

__all__ = ["Rollout", "rollout"]


@define(frozen=True, kw_only=True)
class Rollout:
    """Result of running a policy on one application.

    Arguments:
        trajectory: the collected transitions.
        record: the finished application.
        total_reward: sum of the rewards.
    """

    trajectory: Trajectory
    record: AppRecord
    total_reward: float


def rollout(
    env: SchedulingEnv,
    net: DualZoneNetwork,
    app: DagApplication,
    gamma: float,
    rng: Optional[np.random.Generator] = None,
) -> Rollout:
    """Schedules an application with a policy.

    Arguments:
        env: the domain environment, reset to `app`.
        net: the policy; only the logits of populated server slots are used.
        app: the application to schedule.
        gamma: discount of the returned trajectory.
        rng: source of sampled actions; `None` picks the greedy action.
    """
    env.reset(app)

    states = []
    actions = []
    rewards = []
    values = []
    log_probs = []

    obs = env.observe()
    while obs is not None:
        state = env.encode(obs)
        logits, value = net.forward(state)
        probs = softmax_temperature(logits[: env.n_servers], 1.0)

        if rng is None:
            action = int(np.argmax(probs))
        else:
            action = int(rng.choice(env.n_servers, p=probs))

        obs, reward = env.step(ActionChoice(server_index=action))

        states.append(state)
        actions.append(action)
        rewards.append(reward.value)
        values.append(value)
        log_probs.append(float(np.log(max(probs[action], 1e-300))))

    return Rollout(
        trajectory=Trajectory(
            states=states,
            actions=actions,
            rewards=rewards,
            values=values,
            log_probs=log_probs,
            gamma=gamma,
        ),
        record=env.last_record,
        total_reward=float(sum(rewards)),
    )
