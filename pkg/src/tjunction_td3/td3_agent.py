"""Twin-critic actor-critic agent with delayed policy updates and target smoothing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .env import DoneKind
from .neural import (
    Activation,
    AdamState,
    Mlp,
    adam_step,
    backward_cache,
    forward,
    forward_cache,
    init_mlp,
    polyak_update,
)
from .world_sim import Action

ACTION_SIZE = 3
DONE_CODES = {DoneKind.RUNNING: 0, DoneKind.COLLISION: 1, DoneKind.GOAL: 2, DoneKind.TIMEOUT: 3}
_BOOTSTRAP = np.array([1.0, 0.0, 0.0, 1.0])  # indexed by done code


class UnderfilledBuffer(RuntimeError):
    pass


@dataclass(frozen=True)
class Td3Config:
    gamma: float = 0.99
    lr: float = 3e-4
    batch: int = 64
    exploration_noise_sigma: float = 0.1
    exploration_steps: int = 10000
    policy_delay: int = 2
    tau: float = 0.005
    target_noise_sigma: float = 0.2
    target_noise_clip: float = 0.5
    episodes: int = 2000
    max_steps: int = 500
    buffer_capacity: int = 5000
    hidden: tuple[int, ...] = (256, 256)
    actor_final_scale: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 1 <= self.batch <= self.buffer_capacity:
            raise ValueError(f"batch must lie in [1, buffer_capacity], got {self.batch}")
        if self.policy_delay < 1:
            raise ValueError(f"policy_delay must be >= 1, got {self.policy_delay}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if min(self.exploration_noise_sigma, self.target_noise_sigma, self.target_noise_clip) < 0:
            raise ValueError("noise parameters must be non-negative")
        if self.exploration_steps < 0 or self.episodes < 0 or self.max_steps < 1:
            raise ValueError("exploration_steps and episodes must be >= 0, max_steps >= 1")


def to_env_action(raw) -> Action:
    """Map a raw action in [-1, 1]^3 to (throttle, steer, brake)."""
    a = np.clip(np.asarray(raw, dtype=float), -1.0, 1.0)
    return Action((a[0] + 1.0) / 2.0, a[1], (a[2] + 1.0) / 2.0)


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done_kind: DoneKind


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    done_codes: np.ndarray
    indices: np.ndarray

    @property
    def bootstrap(self) -> np.ndarray:
        return _BOOTSTRAP[self.done_codes]


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is overwritten first."""

    def __init__(self, obs_size: int, capacity: int = 5000, action_size: int = ACTION_SIZE) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_size))
        self.actions = np.zeros((capacity, action_size))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, obs_size))
        self.done_codes = np.zeros(capacity, dtype=np.int64)
        self.ids = np.full(capacity, -1, dtype=np.int64)  # insertion counter of each slot
        self.cursor = 0
        self.size = 0
        self.pushed = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        i = self.cursor
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.done_codes[i] = DONE_CODES[DoneKind(t.done_kind)]
        self.ids[i] = self.pushed
        self.pushed += 1
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        if self.size < n:
            raise UnderfilledBuffer(f"buffer holds {self.size} transitions, {n} requested")
        idx = rng.integers(0, self.size, size=n)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx],
                     self.done_codes[idx], idx)


def buffer_push(buffer: ReplayBuffer, t: Transition) -> None:
    buffer.push(t)


def buffer_sample(buffer: ReplayBuffer, n: int, rng: np.random.Generator) -> Batch:
    return buffer.sample(n, rng)


@dataclass
class TrainStats:
    critic_loss: float
    actor_loss: Optional[float]
    actor_updated: bool


@dataclass
class Td3Agent:
    obs_size: int
    config: Td3Config
    actor: Mlp
    critic1: Mlp
    critic2: Mlp
    actor_target: Mlp
    critic1_target: Mlp
    critic2_target: Mlp
    actor_opt: AdamState
    critic1_opt: AdamState
    critic2_opt: AdamState
    rng: np.random.Generator
    updates: int = 0
    actor_updates: int = 0
    env_steps: int = 0

    @classmethod
    def create(cls, obs_size: int, config: Td3Config = Td3Config(), seed: int = 0) -> "Td3Agent":
        rng = np.random.default_rng(seed)
        hidden = tuple(config.hidden)
        actor = init_mlp((obs_size,) + hidden + (ACTION_SIZE,), Activation.TANH, rng,
                         final_scale=config.actor_final_scale)
        c1 = init_mlp((obs_size + ACTION_SIZE,) + hidden + (1,), Activation.IDENTITY, rng)
        c2 = init_mlp((obs_size + ACTION_SIZE,) + hidden + (1,), Activation.IDENTITY, rng)
        return cls(obs_size, config, actor, c1, c2, actor.copy(), c1.copy(), c2.copy(),
                   AdamState.for_net(actor, config.lr), AdamState.for_net(c1, config.lr),
                   AdamState.for_net(c2, config.lr), rng)

    def networks(self) -> dict[str, Mlp]:
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
                "actor_target": self.actor_target, "critic1_target": self.critic1_target,
                "critic2_target": self.critic2_target}

    def optimizers(self) -> dict[str, AdamState]:
        return {"actor": self.actor_opt, "critic1": self.critic1_opt, "critic2": self.critic2_opt}

    # ------------------------------------------------------------------ acting

    def uniform_action(self) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, size=ACTION_SIZE)

    def select_action(self, state: np.ndarray, explore: bool = True) -> np.ndarray:
        """Raw action in [-1, 1]^3.

        With ``explore`` the first ``exploration_steps`` calls return uniform
        random actions and later calls add Gaussian noise to the actor output.
        """
        if explore:
            self.env_steps += 1
            if self.env_steps <= self.config.exploration_steps:
                return self.uniform_action()
            a = forward(self.actor, state) + self.rng.normal(0.0, self.config.exploration_noise_sigma, ACTION_SIZE)
            return np.clip(a, -1.0, 1.0)
        return forward(self.actor, state)

    @property
    def warming_up(self) -> bool:
        return self.env_steps < self.config.exploration_steps

    # -------------------------------------------------------------- TD targets

    def target_noise(self, n: int) -> np.ndarray:
        c = self.config
        return np.clip(self.rng.normal(0.0, c.target_noise_sigma, size=(n, ACTION_SIZE)), -c.target_noise_clip,
                       c.target_noise_clip)

    def smoothed_target_action(self, next_states: np.ndarray, noise: Optional[np.ndarray] = None) -> np.ndarray:
        if noise is None:
            noise = self.target_noise(len(next_states))
        return np.clip(forward(self.actor_target, next_states) + noise, -1.0, 1.0)

    def twin_target_q(self, batch: Batch, noise: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
        a2 = self.smoothed_target_action(batch.next_states, noise)
        x2 = np.hstack((batch.next_states, a2))
        return forward(self.critic1_target, x2)[:, 0], forward(self.critic2_target, x2)[:, 0]

    def critic_target(self, batch: Batch, noise: Optional[np.ndarray] = None) -> np.ndarray:
        q1, q2 = self.twin_target_q(batch, noise)
        return batch.rewards + batch.bootstrap * self.config.gamma * np.minimum(q1, q2)

    # ---------------------------------------------------------------- learning

    def train_step(self, buffer: ReplayBuffer) -> TrainStats:
        """One critic update; every ``policy_delay``-th call also updates the actor and targets."""
        c = self.config
        if buffer.size < c.batch:
            raise UnderfilledBuffer(f"buffer holds {buffer.size} transitions, batch is {c.batch}")
        batch = buffer.sample(c.batch, self.rng)
        y = self.critic_target(batch)[:, None]
        x = np.hstack((batch.states, batch.actions))
        n = len(y)
        loss = 0.0
        for net, opt in ((self.critic1, self.critic1_opt), (self.critic2, self.critic2_opt)):
            q, cache = forward_cache(net, x)
            err = q - y
            loss += float(np.mean(err * err))
            adam_step(net, backward_cache(net, cache, (2.0 / n) * err), opt)
        self.updates += 1
        actor_loss = None
        updated = self.updates % c.policy_delay == 0
        if updated:
            a_pi, cache_a = forward_cache(self.actor, batch.states)
            q, cache_q = forward_cache(self.critic1, np.hstack((batch.states, a_pi)))
            actor_loss = -float(np.mean(q))
            g_q = backward_cache(self.critic1, cache_q, np.full((n, 1), -1.0 / n), param_grads=False)
            adam_step(self.actor, backward_cache(self.actor, cache_a, g_q.input[:, self.obs_size:]), self.actor_opt)
            polyak_update(self.actor_target, self.actor, c.tau)
            polyak_update(self.critic1_target, self.critic1, c.tau)
            polyak_update(self.critic2_target, self.critic2, c.tau)
            self.actor_updates += 1
        return TrainStats(loss / 2.0, actor_loss, updated)
