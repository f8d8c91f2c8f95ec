"""Desk-scale quality-diversity control tasks.

Three fixed-horizon tasks with strictly non-negative rewards:

``point_mass_omni``
    A 2-D point mass with velocity state in a [-5, 5]^2 arena. Fitness rewards
    economy of action, the descriptor is the final position.
``point_trap_omni``
    Same, plus a rectangular obstacle that stops the mass dead on contact.
``duty_cycle_uni``
    Two "legs" whose alternation propels a 1-D body forward. The descriptor is
    the fraction of steps each leg spends in stance (action > 0).

Rollouts are vectorised over a population of policies. Rewards are snapped to
a 2**-30 grid so that episode returns, fitness differences and archive sums
are exact in float64 regardless of summation order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn

REWARD_GRID = 2.0 ** 30


def quantize_reward(r: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(r, dtype=np.float64) * REWARD_GRID) / REWARD_GRID


@dataclass(frozen=True)
class StepResult:
    next_state: np.ndarray
    reward: float
    done: bool


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    d: np.ndarray
    d_target: np.ndarray


@dataclass
class Transitions:
    """Column-wise storage for the transitions of one or more episodes.

    Target descriptors start as NaN ("unset") until the scheduler stamps them.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    descriptors: np.ndarray
    target_descriptors: np.ndarray

    def __len__(self):
        return len(self.rewards)

    def __getitem__(self, i) -> Transition:
        return Transition(
            self.states[i], self.actions[i], float(self.rewards[i]), self.next_states[i],
            bool(self.dones[i]), self.descriptors[i], self.target_descriptors[i],
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def stamped(self) -> bool:
        return bool(np.isfinite(self.descriptors).all() and np.isfinite(self.target_descriptors).all())

    def with_targets(self, target: np.ndarray) -> "Transitions":
        tgt = np.broadcast_to(np.asarray(target, dtype=np.float64), self.descriptors.shape).copy()
        return Transitions(self.states, self.actions, self.rewards, self.next_states,
                           self.dones, self.descriptors, tgt)

    @classmethod
    def concatenate(cls, parts: list["Transitions"]) -> "Transitions":
        cols = ("states", "actions", "rewards", "next_states", "dones", "descriptors", "target_descriptors")
        return cls(*(np.concatenate([getattr(p, c) for p in parts]) for c in cols))


@dataclass
class EvalResult:
    fitness: float
    descriptor: np.ndarray
    transitions: Transitions


@dataclass(frozen=True)
class QDEnv:
    """Base class. Subclasses implement the batched ``_reset``/``_step``/``_descriptor``."""

    episode_length: int = 100
    action_noise: float = 0.0
    reset_noise: float = 0.0
    descriptor_noise: float = 0.0

    env_id = "base"
    state_dim = 0
    action_dim = 0
    descriptor_dim = 0

    def __post_init__(self):
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")
        if min(self.action_noise, self.reset_noise, self.descriptor_noise) < 0:
            raise ValueError("noise scales must be non-negative")

    @property
    def stochastic(self) -> bool:
        return self.action_noise > 0 or self.reset_noise > 0 or self.descriptor_noise > 0

    @property
    def descriptor_low(self) -> np.ndarray:
        return np.zeros(self.descriptor_dim)

    @property
    def descriptor_high(self) -> np.ndarray:
        return np.ones(self.descriptor_dim)

    def to_dict(self) -> dict:
        return {"id": self.env_id, **asdict(self)}

    # single-episode API

    def reset(self, seed: int | None = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return self._reset(1, [rng])[0]

    def step(self, state: np.ndarray, action: np.ndarray) -> StepResult:
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        if not (np.isfinite(state).all() and np.isfinite(action).all()):
            raise FloatingPointError("non-finite state or action")
        nxt, r = self._step(state[None], np.clip(action, -1.0, 1.0)[None])
        return StepResult(nxt[0], float(r[0]), False)

    # batched internals

    def _reset(self, count: int, rngs) -> np.ndarray:
        raise NotImplementedError

    def _step(self, states: np.ndarray, actions: np.ndarray):
        raise NotImplementedError

    def _descriptor(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Normalised descriptor from full trajectories, shapes (P, T+1, S) and (P, T, A)."""
        raise NotImplementedError


def _disk_sample(rng: np.random.Generator, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform())
    th = rng.uniform(0.0, 2 * np.pi)
    return np.array([r * np.cos(th), r * np.sin(th)])


@dataclass(frozen=True)
class PointMassOmni(QDEnv):
    dt: float = 0.1
    arena: float = 5.0
    v_max: float = 1.0

    env_id = "point_mass_omni"
    state_dim = 4
    action_dim = 2
    descriptor_dim = 2

    def _reset(self, count, rngs):
        states = np.zeros((count, 4))
        if self.reset_noise > 0:
            for k, rng in enumerate(rngs):
                states[k, :2] = _disk_sample(rng, self.reset_noise)
        return states

    def _move(self, states, actions):
        v = np.clip(states[:, 2:] + actions * self.dt, -self.v_max, self.v_max)
        x = np.clip(states[:, :2] + v * self.dt, -self.arena, self.arena)
        return x, v

    def _step(self, states, actions):
        x, v = self._move(states, actions)
        reward = quantize_reward(1.0 - 0.5 * np.mean(actions * actions, axis=-1))
        return np.concatenate([x, v], axis=-1), reward

    def _descriptor(self, states, actions):
        return (states[:, -1, :2] + self.arena) / (2 * self.arena)


@dataclass(frozen=True)
class PointTrapOmni(PointMassOmni):
    """Point mass with an axis-aligned box obstacle; touching it zeroes velocity."""

    trap: tuple[float, float, float, float] = (1.0, 1.5, -2.0, 2.0)  # x_min, x_max, y_min, y_max

    env_id = "point_trap_omni"

    def _step(self, states, actions):
        x, v = self._move(states, actions)
        x0, x1, y0, y1 = self.trap
        inside = (x[:, 0] > x0) & (x[:, 0] < x1) & (x[:, 1] > y0) & (x[:, 1] < y1)
        if inside.any():
            prev = states[:, :2]
            for k in np.flatnonzero(inside):
                px, py = prev[k]
                if px <= x0:
                    x[k, 0] = x0
                elif px >= x1:
                    x[k, 0] = x1
                elif py <= y0:
                    x[k, 1] = y0
                else:
                    x[k, 1] = y1
            v[inside] = 0.0
        reward = quantize_reward(1.0 - 0.5 * np.mean(actions * actions, axis=-1))
        return np.concatenate([x, v], axis=-1), reward


@dataclass(frozen=True)
class DutyCycleUni(QDEnv):
    """Two-leg forward locomotion.

    State is ``(vx, stance_0, stance_1)`` where stances are those of the
    previous step. A leg is in stance when its action is positive. Thrust is
    produced only when exactly one leg is in stance, proportional to
    ``|a0 - a1| / 2``; velocity relaxes towards twice the thrust.
    """

    episode_length: int = 200
    dt: float = 0.1
    v_max: float = 1.0

    env_id = "duty_cycle_uni"
    state_dim = 3
    action_dim = 2
    descriptor_dim = 2

    def _reset(self, count, rngs):
        states = np.zeros((count, 3))
        if self.reset_noise > 0:
            for k, rng in enumerate(rngs):
                states[k, 0] = rng.uniform(0.0, self.reset_noise)
        return states

    def _step(self, states, actions):
        stance = actions > 0
        single = stance[:, 0] != stance[:, 1]
        push = np.where(single, 0.5 * np.abs(actions[:, 0] - actions[:, 1]), 0.0)
        vx = np.clip(states[:, 0] + self.dt * (2.0 * push - states[:, 0]), 0.0, self.v_max)
        reward = quantize_reward(
            0.5 * np.clip(vx / self.v_max, 0.0, 1.0) + 0.5 * (1.0 - np.mean(actions * actions, axis=-1))
        )
        return np.column_stack([vx, stance.astype(np.float64)]), reward

    def _descriptor(self, states, actions):
        return np.mean(actions > 0, axis=1).astype(np.float64)


ENVS = {cls.env_id: cls for cls in (PointMassOmni, PointTrapOmni, DutyCycleUni)}


def make_env(env_id: str, **params) -> QDEnv:
    try:
        cls = ENVS[env_id]
    except KeyError:
        raise ValueError(f"unknown env {env_id!r}; choose from {sorted(ENVS)}") from None
    if "trap" in params:
        params["trap"] = tuple(params["trap"])
    return cls(**params)


def env_from_dict(d: dict) -> QDEnv:
    d = dict(d)
    return make_env(d.pop("id"), **d)


def rollout(env: QDEnv, genotypes: np.ndarray, arch: nn.Architecture, seeds=None,
            conditions: np.ndarray | None = None) -> list[EvalResult]:
    """Roll out a population of policies for one full episode each.

    ``genotypes`` is ``(P, n_params)``. ``conditions``, when given, is a
    ``(P, c)`` array appended to every observation; this is how a
    descriptor-conditioned actor is run directly. ``seeds`` gives one seed per
    policy and is only consulted by stochastic envs.
    """
    genotypes = np.atleast_2d(np.asarray(genotypes, dtype=np.float64))
    P = genotypes.shape[0]
    extra = 0 if conditions is None else conditions.shape[-1]
    if arch.input_dim != env.state_dim + extra:
        raise nn.DimensionError("policy input", env.state_dim + extra, arch.input_dim)
    if arch.output_dim != env.action_dim:
        raise nn.DimensionError("policy output", env.action_dim, arch.output_dim)
    T = env.episode_length

    rngs = None
    if env.stochastic:
        if seeds is None:
            raise ValueError("stochastic env needs per-policy seeds")
        rngs = [np.random.default_rng(s) for s in seeds]
    state = env._reset(P, rngs)
    act_noise = None
    if env.action_noise > 0:
        act_noise = np.stack([rng.normal(0.0, env.action_noise, size=(T, env.action_dim)) for rng in rngs], axis=1)

    states = np.empty((P, T + 1, env.state_dim))
    actions = np.empty((P, T, env.action_dim))
    rewards = np.empty((P, T))
    states[:, 0] = state
    for t in range(T):
        obs = state if conditions is None else np.concatenate([state, conditions], axis=-1)
        a = nn.forward_flat(genotypes, arch, obs[:, None, :])[:, 0, :]
        if act_noise is not None:
            a = a + act_noise[t]
        a = np.clip(a, -1.0, 1.0)
        state, r = env._step(state, a)
        actions[:, t] = a
        rewards[:, t] = r
        states[:, t + 1] = state

    desc = env._descriptor(states, actions)
    if env.descriptor_noise > 0:
        desc = desc + np.stack([rng.normal(0.0, env.descriptor_noise, size=env.descriptor_dim) for rng in rngs])
    desc = np.clip(desc, 0.0, 1.0)

    dones = np.zeros(T, dtype=bool)
    dones[-1] = True
    # rewards sit on a dyadic grid, so this sum is exact
    fitness = rewards.sum(axis=1)
    results = []
    for k in range(P):
        tr = Transitions(
            states[k, :-1].copy(), actions[k].copy(), rewards[k].copy(), states[k, 1:].copy(),
            dones.copy(), np.repeat(desc[k][None], T, axis=0), np.full((T, env.descriptor_dim), np.nan),
        )
        results.append(EvalResult(float(fitness[k]), desc[k].copy(), tr))
    return results


def evaluate(env: QDEnv, policy: nn.MlpParams, seed: int = 0) -> EvalResult:
    return rollout(env, nn.flatten(policy)[None], policy.architecture, [seed])[0]
