"""Replay buffer and descriptor-conditioned TD3.

The two critics are stored as one stacked parameter array of shape
``(2, n_params)`` so both are evaluated and updated with a single batched
call. ``critics[0]`` is the critic used for policy gradients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .envs import Transitions

log = logging.getLogger(__name__)


class EmptyBufferError(LookupError):
    pass


class ReplayBuffer:
    """Fixed-capacity FIFO ring over descriptor-augmented transitions."""

    def __init__(self, state_dim: int, action_dim: int, descriptor_dim: int, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.state_dim, self.action_dim, self.descriptor_dim = state_dim, action_dim, descriptor_dim
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.descriptors = np.zeros((capacity, descriptor_dim))
        self.target_descriptors = np.zeros((capacity, descriptor_dim))
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def insert(self, tr: Transitions) -> None:
        if not tr.stamped:
            raise ValueError("transitions must carry both observed and target descriptors")
        n = len(tr)
        if n == 0:
            return
        if n > self.capacity:
            tr = Transitions(*(getattr(tr, c)[-self.capacity:] for c in _COLUMNS))
            n = self.capacity
        idx = (self.cursor + np.arange(n)) % self.capacity
        for c in _COLUMNS:
            getattr(self, c)[idx] = getattr(tr, c)
        self.cursor = int((self.cursor + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)

    def ordered(self) -> Transitions:
        """Contents from oldest to newest."""
        start = self.cursor if self.size == self.capacity else 0
        idx = (start + np.arange(self.size)) % self.capacity
        return self.gather(idx)

    def gather(self, idx: np.ndarray) -> Transitions:
        return Transitions(*(getattr(self, c)[idx] for c in _COLUMNS))

    def sample_indices(self, shape, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=shape)

    def sample_uniform(self, n: int, rng: np.random.Generator) -> Transitions:
        return self.gather(self.sample_indices(n, rng))


_COLUMNS = ("states", "actions", "rewards", "next_states", "dones", "descriptors", "target_descriptors")


def similarity(d: np.ndarray, d_target: np.ndarray, length_scale: float) -> np.ndarray:
    """exp(-||d - d'|| / L) along the last axis."""
    if length_scale <= 0:
        raise ValueError(f"length scale must be positive, got {length_scale}")
    diff = np.asarray(d, dtype=np.float64) - np.asarray(d_target, dtype=np.float64)
    return np.exp(-np.sqrt(np.sum(diff * diff, axis=-1)) / length_scale)


@dataclass(frozen=True)
class Td3Config:
    discount: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    smoothing_noise: float = 0.2
    noise_clip: float = 0.5
    batch_size: int = 100
    critic_steps: int = 3000
    pg_steps: int = 150
    length_scale: float = 0.1
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    policy_lr: float = 5e-3
    buffer_size: int = 1_000_000
    actor_hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (64, 64)

    def validate(self):
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        if self.length_scale <= 0:
            raise ValueError("length_scale must be positive")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if not 0 <= self.tau <= 1:
            raise ValueError("tau must lie in [0, 1]")
        if self.batch_size < 1 or self.critic_steps < 0 or self.pg_steps < 0:
            raise ValueError("batch_size >= 1, critic_steps >= 0 and pg_steps >= 0 required")
        if self.smoothing_noise < 0 or self.noise_clip < 0:
            raise ValueError("smoothing noise and clip must be non-negative")
        if min(self.actor_lr, self.critic_lr, self.policy_lr) <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class ActorCriticState:
    actor: np.ndarray
    critics: np.ndarray
    actor_target: np.ndarray
    critics_target: np.ndarray
    actor_opt: nn.AdamState
    critics_opt: nn.AdamState
    actor_arch: nn.Architecture
    critic_arch: nn.Architecture
    state_dim: int
    action_dim: int
    descriptor_dim: int
    actor_conditioned: bool = True
    critic_conditioned: bool = True
    step: int = 0
    actor_updates: int = 0

    @property
    def critic1(self) -> np.ndarray:
        return self.critics[0]

    @property
    def critic2(self) -> np.ndarray:
        return self.critics[1]

    def copy(self) -> "ActorCriticState":
        return replace(
            self, actor=self.actor.copy(), critics=self.critics.copy(),
            actor_target=self.actor_target.copy(), critics_target=self.critics_target.copy(),
            actor_opt=self.actor_opt.copy(), critics_opt=self.critics_opt.copy(),
        )


def init_actor_critic(state_dim: int, action_dim: int, descriptor_dim: int, cfg: Td3Config,
                      rng: np.random.Generator, actor_conditioned: bool = True,
                      critic_conditioned: bool = True) -> ActorCriticState:
    a_in = state_dim + (descriptor_dim if actor_conditioned else 0)
    c_in = state_dim + action_dim + (descriptor_dim if critic_conditioned else 0)
    actor_arch = nn.Architecture((a_in, *cfg.actor_hidden, action_dim), "tanh")
    critic_arch = nn.Architecture((c_in, *cfg.critic_hidden, 1), "identity")
    actor = nn.init_params(actor_arch, rng)
    critics = nn.init_params(critic_arch, rng, count=2)
    return ActorCriticState(
        actor=actor, critics=critics, actor_target=actor.copy(), critics_target=critics.copy(),
        actor_opt=nn.AdamState.zeros(actor.shape, cfg.actor_lr),
        critics_opt=nn.AdamState.zeros(critics.shape, cfg.critic_lr),
        actor_arch=actor_arch, critic_arch=critic_arch,
        state_dim=state_dim, action_dim=action_dim, descriptor_dim=descriptor_dim,
        actor_conditioned=actor_conditioned, critic_conditioned=critic_conditioned,
    )


def actor_input(state: ActorCriticState, s: np.ndarray, d: np.ndarray) -> np.ndarray:
    return np.concatenate([s, d], axis=-1) if state.actor_conditioned else s


def critic_input(state: ActorCriticState, s: np.ndarray, a: np.ndarray, d: np.ndarray) -> np.ndarray:
    return np.concatenate([s, a, d], axis=-1) if state.critic_conditioned else np.concatenate([s, a], axis=-1)


def smoothing_noise(shape, cfg: Td3Config, rng: np.random.Generator) -> np.ndarray:
    return np.clip(rng.normal(0.0, cfg.smoothing_noise, size=shape), -cfg.noise_clip, cfg.noise_clip)


def scaled_rewards(batch: Transitions, state: ActorCriticState, cfg: Td3Config) -> np.ndarray:
    """Reward times S(d, d') for a conditioned critic, the raw reward otherwise."""
    if not state.critic_conditioned:
        return batch.rewards
    return similarity(batch.descriptors, batch.target_descriptors, cfg.length_scale) * batch.rewards


def critic_target(batch: Transitions, state: ActorCriticState, cfg: Td3Config,
                  rng: np.random.Generator | None = None, noise: np.ndarray | None = None,
                  rewards: np.ndarray | None = None) -> np.ndarray:
    """TD3 regression target with similarity-scaled reward.

    ``y = S(d, d') r + gamma * min_i Q'_i(s', clip(pi'(s'|d') + eps) | d')``.
    Episodes end by time-out, so every transition bootstraps. ``noise``
    overrides the sampled smoothing noise; ``rewards`` overrides the scaled
    reward (used to check the reward-scaling formulation).
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if noise is None:
        noise = smoothing_noise((len(batch), state.action_dim), cfg, rng)
    if rewards is None:
        rewards = scaled_rewards(batch, state, cfg)
    d_t = batch.target_descriptors
    a_next = nn.forward_flat(state.actor_target, state.actor_arch, actor_input(state, batch.next_states, d_t))
    a_next = np.clip(a_next + noise, -1.0, 1.0)
    x = critic_input(state, batch.next_states, a_next, d_t)
    q_next = nn.forward_flat(state.critics_target, state.critic_arch, np.broadcast_to(x, (2,) + x.shape))
    return rewards + cfg.discount * np.minimum(q_next[0, :, 0], q_next[1, :, 0])


def critic_loss_and_grad(critics: np.ndarray, critic_arch: nn.Architecture, x: np.ndarray, y: np.ndarray):
    """Sum over both critics of the mean squared error to ``y``, and its gradient."""
    n = len(y)
    xs = np.broadcast_to(x, (2,) + x.shape)
    q, acts = nn.forward_flat(critics, critic_arch, xs, cache=True)
    err = q[..., 0] - y
    loss = float(np.sum(err * err) / n)
    grads, _ = nn.backward_flat(critics, critic_arch, acts, (2.0 / n) * err[..., None])
    return loss, grads


def actor_objective_and_grad(actor: np.ndarray, critic1: np.ndarray, state: ActorCriticState,
                             s: np.ndarray, d: np.ndarray):
    """Mean Q1(s, pi(s|d) | d) and its gradient with respect to the actor parameters."""
    n = len(s)
    a, a_acts = nn.forward_flat(actor, state.actor_arch, actor_input(state, s, d), cache=True)
    q, q_acts = nn.forward_flat(critic1, state.critic_arch, critic_input(state, s, a, d), cache=True)
    dx = nn.input_grad_flat(critic1, state.critic_arch, q_acts, np.full_like(q, 1.0 / n))
    da = dx[:, state.state_dim:state.state_dim + state.action_dim]
    grad, _ = nn.backward_flat(actor, state.actor_arch, a_acts, da)
    return float(np.mean(q)), grad


def train_actor_critic(state: ActorCriticState, buffer: ReplayBuffer, cfg: Td3Config,
                       rng: np.random.Generator, steps: int | None = None) -> ActorCriticState:
    """``steps`` (default ``cfg.critic_steps``) TD3 iterations on uniform minibatches.

    The actor and all target networks are updated on every ``policy_delay``-th
    iteration. Does nothing until the buffer holds a full minibatch.
    """
    steps = cfg.critic_steps if steps is None else steps
    if buffer.size < cfg.batch_size:
        log.info("replay buffer holds %d < %d transitions, skipping training", buffer.size, cfg.batch_size)
        return state
    st = state.copy()
    for _ in range(steps):
        batch = buffer.sample_uniform(cfg.batch_size, rng)
        y = critic_target(batch, st, cfg, rng)
        x = critic_input(st, batch.states, batch.actions, batch.target_descriptors)
        _, g = critic_loss_and_grad(st.critics, st.critic_arch, x, y)
        st.critics, st.critics_opt = nn.adam_step(st.critics, g, st.critics_opt)
        st.step += 1
        if st.step % cfg.policy_delay == 0:
            _, ga = actor_objective_and_grad(st.actor, st.critics[0], st, batch.states, batch.target_descriptors)
            st.actor, st.actor_opt = nn.adam_step(st.actor, -ga, st.actor_opt)
            st.actor_target = nn.soft_update(st.actor_target, st.actor, cfg.tau)
            st.critics_target = nn.soft_update(st.critics_target, st.critics, cfg.tau)
            st.actor_updates += 1
    return st
