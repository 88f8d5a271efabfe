"""Stationary synthetic feedback feed for exercising the agent without the simulator.

Every action is answered after a fixed delay with a feedback whose observed
loss fraction is exactly `p_e`, so the reward of each action is the
deterministic value of the reward function at that loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agent import ACTIONS, AgentConfig, AgentState, RLAgent, compute_delta, compute_reward
from .policies import FAILED, SUCCESS
from .simcore import RngStreams


@dataclass
class SyntheticFeed:
    p_e: float
    total: int = 1000
    reply_ms: int = 20

    @property
    def received(self) -> int:
        return int(round(self.total * (1.0 - self.p_e)))

    def status_for(self, rc: float) -> str:
        # decodable iff the surviving fraction covers the information fraction
        return SUCCESS if self.received >= rc * self.total - 1e-9 else FAILED

    def feedback(self, rc: float) -> tuple[int, int, str]:
        return self.received, self.total, self.status_for(rc)


def best_action(p_e: float, total: int = 1000) -> int:
    """Index of the action with the highest reward on the feed, by exhaustive evaluation."""
    feed = SyntheticFeed(p_e, total)
    pe_obs = 1.0 - feed.received / feed.total
    rewards = [compute_reward(compute_delta(pe_obs, rc), feed.status_for(rc)) for rc in ACTIONS]
    return int(np.argmax(rewards))


def train_on_feed(p_e: float, seed: int, steps: int = 1500, rtt_ms: int = 2000,
                  cfg: AgentConfig | None = None) -> RLAgent:
    agent = RLAgent(RngStreams(seed), rtt_ms, cfg, training=True)
    feed = SyntheticFeed(p_e)
    now = 0
    d = agent.begin_round(now)
    for _ in range(steps):
        now += feed.reply_ms
        received, total, status = feed.feedback(d.rc)
        d = agent.on_feedback(d.action_id, received, total, status, now)
    return agent


def steady_state(agent: RLAgent, p_e: float) -> AgentState:
    """The state the agent sits in on the feed once it keeps taking the best action."""
    feed = SyntheticFeed(p_e)
    s2 = 0 if feed.status_for(ACTIONS[best_action(p_e)]) == FAILED else 1
    return AgentState(round(1.0 - feed.received / feed.total, 3), s2, agent.state.s3)
