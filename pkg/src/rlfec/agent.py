"""Deep Q-learning code-rate controller with delayed per-matrix feedback.

The agent picks one of six code rates, remembers (action id, state, action)
until a matrix sealed under that action reports back, and then learns to
predict the immediate reward only (no bootstrapping, no target network).
"""

from __future__ import annotations

import io
import logging
import math
from collections import OrderedDict
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .nn import PARAM_NAMES, Adam, DuelingNetwork
from .policies import FAILED, RatePolicy, RateDecision

log = logging.getLogger(__name__)

ACTIONS = (0.66, 0.70, 0.74, 0.78, 0.82, 0.86)
CHECKPOINT_VERSION = 1

# |delta| cannot exceed this for p_e in [0, 1] and rates in ACTIONS
DELTA_MAX = max(ACTIONS[-1], 1.0 - ACTIONS[0])
REWARD_MIN = -((DELTA_MAX / 0.2) ** 2) - 1.0
REWARD_MAX = 1.0


@dataclass(frozen=True)
class AgentState:
    s1: float = 0.0  # latest observed loss rate, 3 decimals
    s2: int = 1  # 0 after a decoding failure, else 1
    s3: int = 0  # link-state duration, ms

    def vector(self, rtt_ms: int) -> np.ndarray:
        return np.array([self.s1, float(self.s2), min(self.s3 / rtt_ms, 50.0) / 50.0])


INITIAL_STATE = AgentState()


def observed_loss(received: int, total: int) -> float:
    return 1.0 - received / total


def build_state(prev: AgentState, t1: int, received: int, total: int, status: str, t2: int,
                theta: float = 0.02) -> AgentState:
    """Next state from one feedback received at t2; t1 is the previous feedback (or first action) time."""
    s1 = round(observed_loss(received, total), 3)
    s2 = 0 if status == FAILED else 1
    dt = t2 - t1
    if round(abs(s1 - prev.s1), 9) > theta:
        tau = dt
    else:
        tau = prev.s3 + dt
    return AgentState(s1, s2, tau)


def compute_delta(p_e: float, rc: float) -> float:
    # rounded so that exact matches such as p_e=0.34, rc=0.66 give 0 despite float noise
    return round((1.0 - p_e) - rc, 9)


def compute_reward(delta: float, status: str) -> float:
    if status == FAILED:
        return -((delta / 0.2) ** 2) - 1.0
    if delta > 0:
        return ((delta - 0.2) / 0.2) ** 2
    if delta < 0:
        return -((delta / 0.2) ** 2)
    return 1.0


def epsilon_at(epoch: int, decay: float = 2e-4, floor: float = 0.01) -> float:
    return max(floor, 1.0 - decay * epoch)


@dataclass
class StateActionEntry:
    id_a: int
    state: AgentState
    action_index: int


class StateActionBuffer:
    """Actions awaiting feedback, keyed by action id.

    Matching an id purges every older entry; the matched entry stays so later
    matrices sealed under the same action can also be credited to it.
    """

    def __init__(self):
        self.entries: OrderedDict[int, StateActionEntry] = OrderedDict()
        self.dropped_stale = 0
        self.max_occupancy = 0

    def __len__(self):
        return len(self.entries)

    def push(self, entry: StateActionEntry) -> None:
        if self.entries and entry.id_a <= next(reversed(self.entries)):
            raise ValueError("action ids must increase")
        self.entries[entry.id_a] = entry
        self.max_occupancy = max(self.max_occupancy, len(self.entries))

    def match(self, id_a: int) -> StateActionEntry | None:
        entry = self.entries.get(id_a)
        if entry is None:
            self.dropped_stale += 1
            return None
        while next(iter(self.entries)) < id_a:
            self.entries.popitem(last=False)
        return entry

    def clear(self) -> None:
        self.entries.clear()


class ReplayMemory:
    """Fixed-capacity FIFO ring of (state, action, reward, next_state)."""

    def __init__(self, capacity: int = 10_000, state_dim: int = 3):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.size = 0
        self.pos = 0

    def __len__(self):
        return self.size

    def push(self, s, a: int, r: float, s_next) -> None:
        if not math.isfinite(r):
            raise ValueError("reward must be finite")
        i = self.pos
        self.states[i], self.actions[i], self.rewards[i], self.next_states[i] = s, a, r, s_next
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        return rng.choice(self.size, size=batch, replace=False)


class EpisodeAccounting:
    """Per-100-action reward means and a moving-average convergence flag."""

    def __init__(self, episode_len: int = 100, window: int = 10, delta_conv: float = 0.05,
                 stable_episodes: int = 5):
        self.episode_len = episode_len
        self.window = window
        self.delta_conv = delta_conv
        self.stable_episodes = stable_episodes
        self._current: list[float] = []
        self.episode_means: list[float] = []
        self.moving_avg: list[float] = []

    def add(self, reward: float) -> None:
        self._current.append(reward)
        if len(self._current) == self.episode_len:
            self.close_episode(float(np.mean(self._current)))
            self._current = []

    def close_episode(self, mean: float) -> None:
        self.episode_means.append(mean)
        self.moving_avg.append(float(np.mean(self.episode_means[-self.window:])))

    @property
    def converged(self) -> bool:
        if len(self.moving_avg) < self.stable_episodes:
            return False
        tail = self.moving_avg[-self.stable_episodes:]
        return max(tail) - min(tail) < self.delta_conv


@dataclass
class AgentConfig:
    replay_capacity: int = 10_000
    minibatch: int = 32
    lr: float = 1e-3
    theta: float = 0.02
    eps_decay: float = 2e-4
    eps_floor: float = 0.01
    eval_epsilon: float = 0.01
    hidden: int = 256
    episode_len: int = 100
    conv_window: int = 10
    delta_conv: float = 0.05
    conv_stable: int = 5


def write_npz(path, arrays: dict) -> None:
    """np.savez layout with fixed entry timestamps, so equal arrays give equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


class RLAgent:
    """Owns the network, replay memory and state-action buffer.

    `rngs` must provide the 'agent-exploration', 'network-init' and
    'minibatch-sampling' streams.
    """

    def __init__(self, rngs, rtt_ms: int, cfg: AgentConfig | None = None, training: bool = True):
        self.cfg = cfg or AgentConfig()
        self.rtt_ms = rtt_ms
        self.explore_rng = rngs["agent-exploration"]
        self.batch_rng = rngs["minibatch-sampling"]
        self.net = DuelingNetwork(rngs["network-init"], hidden=self.cfg.hidden, n_actions=len(ACTIONS))
        self.adam = Adam(self.net.params, lr=self.cfg.lr)
        self.memory = ReplayMemory(self.cfg.replay_capacity)
        self.buffer = StateActionBuffer()
        self.accounting = EpisodeAccounting(self.cfg.episode_len, self.cfg.conv_window,
                                            self.cfg.delta_conv, self.cfg.conv_stable)
        self.epoch = 0
        self.training = training
        self.state = INITIAL_STATE
        self.t1 = 0
        self.next_id = 0
        self.last_loss: float | None = None
        self.train_steps = 0
        self.decisions: list[tuple[int, int, int, float, float]] = []

    @property
    def epsilon(self) -> float:
        if not self.training:
            return self.cfg.eval_epsilon
        return epsilon_at(self.epoch, self.cfg.eps_decay, self.cfg.eps_floor)

    def q_values(self, state: AgentState) -> np.ndarray:
        return self.net.forward(state.vector(self.rtt_ms))

    def select_action(self, state: AgentState, now: int) -> tuple[int, RateDecision]:
        eps = self.epsilon
        if self.explore_rng.random() < eps:
            idx = int(self.explore_rng.integers(len(ACTIONS)))
        else:
            idx = int(np.argmax(self.q_values(state)))
        d = RateDecision(ACTIONS[idx], self.next_id, now)
        self.buffer.push(StateActionEntry(self.next_id, state, idx))
        self.decisions.append((now, self.next_id, idx, ACTIONS[idx], state.s1))
        self.next_id += 1
        return idx, d

    def begin_round(self, now: int) -> RateDecision:
        """Fresh action ids and buffer; the first action is taken from the initial state."""
        self.buffer.clear()
        self.next_id = 0
        self.state = INITIAL_STATE
        self.t1 = now
        return self.select_action(self.state, now)[1]

    def on_feedback(self, action_id: int, received: int, total: int, status: str, now: int) -> RateDecision:
        new_state = build_state(self.state, self.t1, received, total, status, now, self.cfg.theta)
        entry = self.buffer.match(action_id)
        if entry is not None:
            delta = compute_delta(observed_loss(received, total), ACTIONS[entry.action_index])
            r = compute_reward(delta, status)
            if not REWARD_MIN <= r <= REWARD_MAX:
                raise AssertionError(f"reward {r} outside [{REWARD_MIN}, {REWARD_MAX}]")
            self.accounting.add(r)
            if self.training:
                self.memory.push(entry.state.vector(self.rtt_ms), entry.action_index, r,
                                 new_state.vector(self.rtt_ms))
                self.train_step()
        self.state = new_state
        self.t1 = now
        return self.select_action(new_state, now)[1]

    def train_step(self) -> float | None:
        if len(self.memory) < self.cfg.minibatch:
            return None
        idx = self.memory.sample(self.batch_rng, self.cfg.minibatch)
        m = self.memory
        # one-step target: y = r; next_states are never read
        loss, grads = self.net.loss_and_grads(m.states[idx], m.actions[idx], m.rewards[idx])
        self.adam.update(self.net.params, grads)
        self.epoch += 1
        self.train_steps += 1
        self.last_loss = loss
        return loss

    def greedy_action(self, state: AgentState) -> int:
        return int(np.argmax(self.q_values(state)))

    # checkpoints -------------------------------------------------------

    def save(self, path) -> None:
        arrays = {f"param_{k}": v for k, v in self.net.params.items()}
        arrays.update({f"adam_m_{k}": v for k, v in self.adam.m.items()})
        arrays.update({f"adam_v_{k}": v for k, v in self.adam.v.items()})
        n = self.memory.size
        arrays.update(
            version=np.array(CHECKPOINT_VERSION),
            shape=np.array([self.net.n_in, self.net.hidden, self.net.n_actions]),
            adam_t=np.array(self.adam.t),
            adam_hyper=np.array([self.adam.lr, self.adam.beta1, self.adam.beta2, self.adam.eps]),
            epoch=np.array(self.epoch),
            epsilon=np.array(self.epsilon),
            mem_states=self.memory.states[:n].copy(),
            mem_actions=self.memory.actions[:n].copy(),
            mem_rewards=self.memory.rewards[:n].copy(),
            mem_next=self.memory.next_states[:n].copy(),
            mem_pos=np.array(self.memory.pos),
        )
        write_npz(path, arrays)

    def load(self, path) -> None:
        with np.load(path) as z:
            version = int(z["version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            shape = tuple(int(x) for x in z["shape"])
            mine = (self.net.n_in, self.net.hidden, self.net.n_actions)
            if shape != mine:
                raise ValueError(f"checkpoint network shape {shape} does not match {mine}")
            for k in PARAM_NAMES:
                if z[f"param_{k}"].shape != self.net.params[k].shape:
                    raise ValueError(f"checkpoint tensor {k} has shape {z[f'param_{k}'].shape}")
                self.net.params[k][...] = z[f"param_{k}"]
                self.adam.m[k][...] = z[f"adam_m_{k}"]
                self.adam.v[k][...] = z[f"adam_v_{k}"]
            self.adam.t = int(z["adam_t"])
            self.epoch = int(z["epoch"])
            n = z["mem_states"].shape[0]
            if n > self.memory.capacity:
                raise ValueError("checkpoint replay memory exceeds configured capacity")
            self.memory.states[:n] = z["mem_states"]
            self.memory.actions[:n] = z["mem_actions"]
            self.memory.rewards[:n] = z["mem_rewards"]
            self.memory.next_states[:n] = z["mem_next"]
            self.memory.size = n
            self.memory.pos = int(z["mem_pos"])


class RLPolicy(RatePolicy):
    """Adapter that lets the FEC sender drive an RLAgent like any other policy."""

    name = "rl"

    def __init__(self, agent: RLAgent):
        self.agent = agent

    def start(self, now: int) -> RateDecision:
        return self.agent.begin_round(now)

    def on_feedback(self, record, now: int) -> RateDecision:
        return self.agent.on_feedback(record.action_id, record.received, record.total, record.status, now)

    @property
    def p_e_est(self) -> float:
        return self.agent.state.s1
