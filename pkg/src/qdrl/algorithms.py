"""Generation schedulers for MAP-Elites and its actor-critic descendants.

One scheduler covers every variant; the algorithm id only switches features:

================  =======  ==============  ================  ==================
algorithm         critic   critic cond.    actor cond.       extra offspring
================  =======  ==============  ================  ==================
me                no       -               -                 -
pga_me            yes      no              no                greedy actor
dcg_me            yes      yes             yes               actor evaluation
dcrl_me           yes      yes             yes               folded actors
ablation_ai       yes      yes             yes               -
ablation_actor    yes      yes             no                greedy actor
================  =======  ==============  ================  ==================

Randomness is keyed by ``(seed, generation, purpose)`` and drawn on the
scheduler thread before any fan-out, so results do not depend on the
number of workers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn, rl
from .archive import AddKind, Archive, cvt_init
from .config import ConfigError, RunConfig
from .envs import QDEnv, Transitions, rollout
from .variation import Origin, actor_injection, fold_actor, variation_ga, variation_pg_batch

log = logging.getLogger(__name__)

_INIT, _TRAIN, _SELECT, _GA, _PG, _AI, _AE, _EVAL = range(8)

_FEATURES = {
    # critic, critic conditioned, actor conditioned
    "me": (False, False, False),
    "pga_me": (True, False, False),
    "dcg_me": (True, True, True),
    "dcrl_me": (True, True, True),
    "ablation_ai": (True, True, True),
    "ablation_actor": (True, True, False),
}


def stream(seed: int, generation: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(generation, purpose)))


@dataclass
class GenerationReport:
    generation: int
    evaluations: int
    qd_score: float
    coverage: float
    max_fitness: float
    improvement: dict[str, float] = field(default_factory=dict)
    offspring: dict[str, int] = field(default_factory=dict)
    outcomes: dict[str, dict[str, int]] = field(default_factory=dict)
    mean_similarity: float = math.nan


@dataclass
class RunResult:
    config: RunConfig
    env: QDEnv
    policy_arch: nn.Architecture
    archive: Archive
    learner: rl.ActorCriticState | None
    init_report: GenerationReport
    reports: list[GenerationReport]

    @property
    def evaluations(self) -> int:
        return self.reports[-1].evaluations if self.reports else 0

    def total_improvement(self) -> float:
        total = sum(self.init_report.improvement.values())
        for rep in self.reports:
            total += sum(rep.improvement.values())
        return total


class Scheduler:
    """Owns archive, replay buffer and learner for one run."""

    def __init__(self, config: RunConfig, workers: int = 1):
        self.config = config.validate()
        self.workers = max(1, int(workers))
        self.env = config.env.make()
        env = self.env
        self.ga, self.pg, self.ai, self.ae = config.batches()
        self.use_critic, self.critic_conditioned, self.actor_conditioned = _FEATURES[config.algorithm]
        self.policy_arch = nn.Architecture((env.state_dim, *config.policy_hidden, env.action_dim), "tanh")
        k = config.n_centroids
        centroids = cvt_init(k, env.descriptor_dim, config.cvt_samples_per_centroid * k,
                             config.cvt_seed, config.cvt_iterations)
        self.archive = Archive(centroids, self.policy_arch.n_params)
        self.learner = None
        self.buffer = None
        if self.use_critic:
            self.learner = rl.init_actor_critic(
                env.state_dim, env.action_dim, env.descriptor_dim, config.td3, stream(config.seed, 0, _TRAIN),
                actor_conditioned=self.actor_conditioned, critic_conditioned=self.critic_conditioned,
            )
            self.buffer = rl.ReplayBuffer(env.state_dim, env.action_dim, env.descriptor_dim, config.td3.buffer_size)
        self.evaluations = 0
        self.generation = 0
        self.reports: list[GenerationReport] = []
        self.init_report: GenerationReport | None = None

    # fan-out helpers

    def _chunks(self, n: int) -> list[slice]:
        parts = min(self.workers, max(n, 1))
        bounds = np.linspace(0, n, parts + 1).astype(int)
        return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def _map(self, fn: Callable, n: int) -> list:
        chunks = self._chunks(n)
        if len(chunks) <= 1:
            return [fn(s) for s in chunks]
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            return list(pool.map(fn, chunks))

    def _evaluate(self, genotypes: np.ndarray, seeds: np.ndarray, conditions=None):
        def work(sl):
            cond = None if conditions is None else conditions[sl]
            return rollout(self.env, genotypes[sl], self.policy_arch if cond is None else self.learner.actor_arch,
                           seeds[sl], cond)
        out = []
        for part in self._map(work, len(genotypes)):
            out.extend(part)
        return out

    def _pg(self, parents: np.ndarray, descriptors: np.ndarray, indices: np.ndarray) -> np.ndarray:
        lr = self.config.td3.policy_lr
        learner = self.learner

        def work(sl):
            return variation_pg_batch(parents[sl], descriptors[sl], self.policy_arch, learner,
                                      self.buffer, indices[sl], lr)
        return np.concatenate(self._map(work, len(parents)))

    # bookkeeping

    def _absorb(self, results, genotypes, origins: list, targets: list, report: GenerationReport):
        """Stamp target descriptors, fill the buffer, then update the archive in index order."""
        if self.buffer is not None:
            parts = []
            for res, tgt in zip(results, targets):
                parts.append(res.transitions.with_targets(res.descriptor if tgt is None else tgt))
            if parts:
                batch = Transitions.concatenate(parts)
                self.buffer.insert(batch)
                if self.critic_conditioned:
                    s = rl.similarity(batch.descriptors, batch.target_descriptors, self.config.td3.length_scale)
                    report.mean_similarity = float(np.mean(s))
        for res, origin, genotype in zip(results, origins, genotypes):
            if origin is None:
                continue
            out = self.archive.add(genotype, res.fitness, res.descriptor)
            key = origin.value
            report.improvement[key] = report.improvement.get(key, 0.0) + out.improvement
            tally = report.outcomes.setdefault(key, {k.value: 0 for k in AddKind})
            tally[out.kind.value] += 1

    def _finish(self, report: GenerationReport) -> GenerationReport:
        report.qd_score, report.coverage, report.max_fitness = self.archive.metrics()
        report.evaluations = self.evaluations
        return report

    def _seeds(self, generation: int, n: int) -> np.ndarray:
        return stream(self.config.seed, generation, _EVAL).integers(0, 2 ** 63 - 1, size=n)

    # phases

    def initialize(self) -> GenerationReport:
        cfg = self.config
        b = cfg.total_batch
        genotypes = nn.init_params(self.policy_arch, stream(cfg.seed, 0, _INIT), count=b)
        results = self._evaluate(genotypes, self._seeds(0, b))
        report = GenerationReport(0, 0, 0.0, 0.0, math.nan, offspring={Origin.INIT.value: b})
        self._absorb(results, genotypes, [Origin.INIT] * b, [None] * b, report)
        self.init_report = self._finish(report)
        return self.init_report

    def step(self) -> GenerationReport:
        cfg, td3 = self.config, self.config.td3
        self.generation += 1
        g = self.generation
        if self.learner is not None:
            self.learner = rl.train_actor_critic(self.learner, self.buffer, td3, stream(cfg.seed, g, _TRAIN))
        sel = stream(cfg.seed, g, _SELECT)

        genotypes, origins, targets = [], [], []
        if self.ga:
            p1, _, _ = self.archive.select_uniform(self.ga, sel)
            p2, _, _ = self.archive.select_uniform(self.ga, sel)
            genotypes.append(variation_ga(p1, p2, cfg.sigma_iso, cfg.sigma_line, stream(cfg.seed, g, _GA)))
            origins += [Origin.GA] * self.ga
            targets += [None] * self.ga
        if self.pg:
            parents, pdesc, _ = self.archive.select_uniform(self.pg, sel)
            if self.buffer.size >= td3.batch_size:
                idx = self.buffer.sample_indices((self.pg, td3.pg_steps, td3.batch_size), stream(cfg.seed, g, _PG))
                children = self._pg(parents, pdesc, idx)
            else:
                log.info("generation %d: buffer below one minibatch, PG offspring are parent copies", g)
                children = parents
            genotypes.append(children)
            origins += [Origin.PG] * self.pg
            targets += list(pdesc)
        if self.ai:
            if self.actor_conditioned:
                pols, sampled = actor_injection(self.learner.actor, self.learner.actor_arch, self.env.state_dim,
                                                self.ai, stream(cfg.seed, g, _AI))
                targets += list(sampled)
            else:
                pols = np.repeat(self.learner.actor[None], self.ai, axis=0)
                targets += [None] * self.ai
            genotypes.append(pols)
            origins += [Origin.AI] * self.ai
        genotypes = np.concatenate(genotypes)

        report = GenerationReport(g, 0, 0.0, 0.0, math.nan)
        for o in origins:
            report.offspring[o.value] = report.offspring.get(o.value, 0) + 1
        for o in set(origins):
            report.improvement.setdefault(o.value, 0.0)

        seeds = self._seeds(g, self.ae + len(genotypes))
        ae_results, ae_targets = [], []
        if self.ae:
            _, ae_targets, _ = self.archive.select_uniform(self.ae, stream(cfg.seed, g, _AE))
            folded = fold_actor(self.learner.actor, self.learner.actor_arch, ae_targets, self.env.state_dim)
            ae_results = self._evaluate(folded, seeds[:self.ae])
            ae_targets = list(ae_targets)
        results = self._evaluate(genotypes, seeds[self.ae:])

        # actor-evaluation rollouts only feed the buffer (origin None)
        self._absorb(
            ae_results + results,
            [None] * self.ae + list(genotypes),
            [None] * self.ae + origins,
            ae_targets + targets,
            report,
        )
        self.evaluations += self.ae + len(results)
        report = self._finish(report)
        self.reports.append(report)
        return report

    def run(self, callback: Callable[[GenerationReport], None] | None = None) -> RunResult:
        if self.init_report is None:
            self.initialize()
        while self.evaluations < self.config.budget:
            rep = self.step()
            if callback is not None:
                callback(rep)
        return RunResult(self.config, self.env, self.policy_arch, self.archive, self.learner,
                         self.init_report, self.reports)


def run(config: RunConfig, workers: int = 1, callback=None) -> RunResult:
    return Scheduler(config, workers).run(callback)


def _run_as(algorithm: str, config: RunConfig, workers: int, callback) -> RunResult:
    if config.algorithm != algorithm:
        raise ConfigError(f"config names algorithm {config.algorithm!r}, expected {algorithm!r}")
    return run(config, workers, callback)


def run_dcrl_me(config: RunConfig, workers: int = 1, callback=None) -> RunResult:
    return _run_as("dcrl_me", config, workers, callback)


def run_dcg_me(config: RunConfig, workers: int = 1, callback=None) -> RunResult:
    return _run_as("dcg_me", config, workers, callback)


def run_pga_me(config: RunConfig, workers: int = 1, callback=None) -> RunResult:
    return _run_as("pga_me", config, workers, callback)


def run_map_elites(config: RunConfig, workers: int = 1, callback=None) -> RunResult:
    return _run_as("me", config, workers, callback)


def run_ablation(config: RunConfig, kind: str, workers: int = 1, callback=None) -> RunResult:
    """``kind`` is ``"ai"`` (no injection, no actor evaluation) or ``"actor"`` (unconditioned actor)."""
    if kind not in ("ai", "actor"):
        raise ValueError(f"unknown ablation {kind!r}")
    return _run_as(f"ablation_{kind}", config, workers, callback)
