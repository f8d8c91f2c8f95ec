"""Offspring generators: iso+line GA, critic-guided PG variation, actor injection."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .rl import ActorCriticState, ReplayBuffer, critic_input

log = logging.getLogger(__name__)


class Origin(enum.Enum):
    INIT = "init"
    GA = "ga"
    PG = "pg"
    AI = "ai"


@dataclass
class Offspring:
    genotype: np.ndarray
    origin: Origin
    target_descriptor: np.ndarray | None = None


def variation_ga(parent1: np.ndarray, parent2: np.ndarray, sigma_iso: float, sigma_line: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Iso+line mutation: ``p1 + s_iso * N(0, I) + s_line * N(0, 1) * (p2 - p1)``.

    Works row-wise on ``(P, n)`` stacks as well; each row draws its own line
    coefficient.
    """
    parent1 = np.asarray(parent1, dtype=np.float64)
    parent2 = np.asarray(parent2, dtype=np.float64)
    if parent1.shape != parent2.shape:
        raise nn.DimensionError("parent genotypes", parent1.shape, parent2.shape)
    iso = rng.normal(0.0, 1.0, size=parent1.shape)
    line = rng.normal(0.0, 1.0, size=parent1.shape[:-1] + (1,))
    return parent1 + sigma_iso * iso + sigma_line * line * (parent2 - parent1)


def pg_objective_and_grad(genotypes: np.ndarray, policy_arch: nn.Architecture, critic1: np.ndarray,
                          learner: ActorCriticState, states: np.ndarray, descriptors: np.ndarray | None):
    """Mean critic value of each policy's own actions and its parameter gradient.

    ``genotypes`` is ``(P, n)``, ``states`` is ``(P, N, state_dim)`` and
    ``descriptors`` ``(P, descriptor_dim)`` conditions the critic for every
    row (ignored by an unconditioned critic).
    """
    P, N = states.shape[:2]
    a, a_acts = nn.forward_flat(genotypes, policy_arch, states, cache=True)
    d = None
    if learner.critic_conditioned:
        d = np.broadcast_to(descriptors[:, None, :], (P, N, descriptors.shape[-1]))
    x = critic_input(learner, states, a, d)
    q, q_acts = nn.forward_flat(critic1, learner.critic_arch, x, cache=True)
    dx = nn.input_grad_flat(critic1, learner.critic_arch, q_acts, np.full_like(q, 1.0 / N))
    da = dx[..., learner.state_dim:learner.state_dim + learner.action_dim]
    grad, _ = nn.backward_flat(genotypes, policy_arch, a_acts, da)
    return q[..., 0].mean(axis=-1), grad


def variation_pg_batch(genotypes: np.ndarray, parent_descriptors: np.ndarray, policy_arch: nn.Architecture,
                       learner: ActorCriticState, buffer: ReplayBuffer, indices: np.ndarray,
                       lr: float) -> np.ndarray:
    """Gradient ascent on the critic for a stack of policies.

    ``indices`` has shape ``(P, m, N)`` and names the replay-buffer states used
    at each of the ``m`` steps. Each policy gets its own Adam state. The
    learner is only read.
    """
    out = np.array(genotypes, dtype=np.float64, copy=True)
    P, m = indices.shape[:2]
    if m == 0 or P == 0:
        return out
    critic1 = learner.critics[0]
    opt = nn.AdamState.zeros(out.shape, lr)
    for i in range(m):
        states = buffer.states[indices[:, i]]
        _, grad = pg_objective_and_grad(out, policy_arch, critic1, learner, states, parent_descriptors)
        out, opt = nn.adam_step(out, -grad, opt)
    return out


def variation_pg(genotype: np.ndarray, parent_descriptor: np.ndarray, policy_arch: nn.Architecture,
                 learner: ActorCriticState, buffer: ReplayBuffer, m: int, lr: float, batch_size: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Single-policy PG variation; a copy of the parent when the buffer is too small."""
    if buffer.size < batch_size:
        log.info("replay buffer too small for PG variation, returning the parent")
        return np.array(genotype, copy=True)
    idx = buffer.sample_indices((1, m, batch_size), rng)
    d = np.atleast_2d(np.asarray(parent_descriptor, dtype=np.float64))
    return variation_pg_batch(np.atleast_2d(genotype), d, policy_arch, learner, buffer, idx, lr)[0]


def fold_actor(actor: np.ndarray, actor_arch: nn.Architecture, descriptor: np.ndarray,
               state_dim: int) -> np.ndarray:
    """Bake a fixed descriptor into the first layer of a conditioned actor.

    With the actor's first layer split row-wise into the state block ``W1``
    and the descriptor block ``W2``, the folded policy keeps ``W1`` and uses
    ``d @ W2 + b`` as bias. The remaining layers are copied unchanged.
    ``descriptor`` may also be a ``(B, d)`` stack, giving ``(B, n)`` policies.
    """
    descriptor = np.asarray(descriptor, dtype=np.float64)
    fan_in, fan_out, w_off, b_off = actor_arch.layer_offsets()[0]
    ddim = fan_in - state_dim
    if ddim < 1 or descriptor.shape[-1] != ddim:
        raise nn.DimensionError("actor descriptor input", fan_in - state_dim, descriptor.shape[-1])
    w = actor[w_off:b_off].reshape(fan_in, fan_out)
    bias = actor[b_off:b_off + fan_out]
    w1 = w[:state_dim].ravel()
    new_bias = descriptor @ w[state_dim:] + bias
    rest = actor[b_off + fan_out:]
    lead = descriptor.shape[:-1]
    return np.concatenate([
        np.broadcast_to(w1, lead + w1.shape),
        new_bias,
        np.broadcast_to(rest, lead + rest.shape),
    ], axis=-1)


def policy_architecture(actor_arch: nn.Architecture, state_dim: int) -> nn.Architecture:
    return nn.Architecture((state_dim,) + actor_arch.layer_sizes[1:], actor_arch.output_activation)


def actor_injection(actor: np.ndarray, actor_arch: nn.Architecture, state_dim: int, count: int,
                    rng: np.random.Generator):
    """``count`` folded policies for descriptors drawn uniformly from the unit box.

    Returns ``(policies (count, n), descriptors (count, d))``.
    """
    ddim = actor_arch.input_dim - state_dim
    descriptors = rng.uniform(0.0, 1.0, size=(count, ddim))
    if count == 0:
        return np.zeros((0, policy_architecture(actor_arch, state_dim).n_params)), descriptors
    return fold_actor(actor, actor_arch, descriptors, state_dim), descriptors
