"""Re-evaluation of archives and of the conditioned actor, plus cross-seed aggregation."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import nn
from .archive import Archive
from .envs import QDEnv, rollout
from .variation import fold_actor, policy_architecture


@dataclass
class ReproReport:
    """Expected metrics over ``n_reps`` re-evaluations of every occupied cell.

    ``cell_distance`` is measured to the stored elite descriptor (the
    default); ``cell_centroid_distance`` to the cell centroid.
    """

    expected_qd_score: float
    expected_distance_to_descriptor: float
    expected_max_fitness: float
    cells: np.ndarray
    cell_fitness: np.ndarray
    cell_distance: np.ndarray
    cell_centroid_distance: np.ndarray
    n_reps: int

    @property
    def expected_distance_to_centroid(self) -> float:
        return float(np.mean(self.cell_centroid_distance)) if len(self.cells) else math.nan

    def summary(self) -> dict:
        return {
            "expected_qd_score": self.expected_qd_score,
            "expected_distance_to_descriptor": self.expected_distance_to_descriptor,
            "expected_distance_to_centroid": self.expected_distance_to_centroid,
            "expected_max_fitness": self.expected_max_fitness,
            "n_cells": int(len(self.cells)),
            "n_reps": self.n_reps,
        }


def _cell_seeds(seed: int, cells: np.ndarray, n_reps: int) -> np.ndarray:
    """Seeds depend on (seed, cell index, repetition) only, not on evaluation order."""
    out = np.empty((len(cells), n_reps), dtype=np.int64)
    for k, c in enumerate(cells):
        ss = np.random.SeedSequence(seed, spawn_key=(int(c),))
        out[k] = ss.generate_state(n_reps, dtype=np.uint64) >> np.uint64(1)
    return out


def _report(archive: Archive, cells: np.ndarray, fitness: np.ndarray, desc: np.ndarray, n_reps: int) -> ReproReport:
    # fitness, desc: (cells, reps) and (cells, reps, d)
    stored = archive.descriptors[cells]
    dist = np.sqrt(np.sum((desc - stored[:, None, :]) ** 2, axis=-1))
    cdist = np.sqrt(np.sum((desc - archive.centroids[cells][:, None, :]) ** 2, axis=-1))
    cell_fit = fitness.mean(axis=1)
    cell_dist = dist.mean(axis=1)
    if len(cells) == 0:
        return ReproReport(0.0, math.nan, math.nan, cells, cell_fit, cell_dist, cdist.mean(axis=1), n_reps)
    return ReproReport(
        expected_qd_score=float(np.sum(cell_fit)),
        expected_distance_to_descriptor=float(np.mean(cell_dist)),
        expected_max_fitness=float(np.max(cell_fit)),
        cells=cells,
        cell_fitness=cell_fit,
        cell_distance=cell_dist,
        cell_centroid_distance=cdist.mean(axis=1),
        n_reps=n_reps,
    )


def _reevaluate(env: QDEnv, policies: np.ndarray, arch: nn.Architecture, seeds: np.ndarray,
                conditions: np.ndarray | None = None, workers: int = 1):
    n_cells, n_reps = seeds.shape
    fitness = np.empty((n_cells, n_reps))
    desc = np.empty((n_cells, n_reps, env.descriptor_dim))
    reps = n_reps if env.stochastic else 1

    def work(sl: slice):
        for r in range(reps):
            cond = None if conditions is None else conditions[sl]
            res = rollout(env, policies[sl], arch, seeds[sl, r], cond)
            fitness[sl, r] = [e.fitness for e in res]
            desc[sl, r] = [e.descriptor for e in res]

    # each policy owns its rng, so the split does not change any number
    parts = max(1, min(int(workers), n_cells))
    bounds = np.linspace(0, n_cells, parts + 1).astype(int)
    slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if len(slices) <= 1:
        for sl in slices:
            work(sl)
    else:
        with ThreadPoolExecutor(max_workers=len(slices)) as pool:
            list(pool.map(work, slices))
    if reps < n_reps:
        # deterministic env: every repetition reproduces the first
        fitness[:, 1:] = fitness[:, :1]
        desc[:, 1:] = desc[:, :1]
    return fitness, desc


def reevaluate_archive(archive: Archive, env: QDEnv, arch: nn.Architecture, n_reps: int = 32,
                       seed: int = 0, workers: int = 1) -> ReproReport:
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    cells = archive.occupied_indices()
    if len(cells) == 0:
        return _report(archive, cells, np.zeros((0, n_reps)), np.zeros((0, n_reps, env.descriptor_dim)), n_reps)
    fitness, desc = _reevaluate(env, archive.genotypes[cells], arch, _cell_seeds(seed, cells, n_reps),
                                 workers=workers)
    return _report(archive, cells, fitness, desc, n_reps)


def evaluate_actor_as_archive(actor: np.ndarray, actor_arch: nn.Architecture, archive: Archive, env: QDEnv,
                              n_reps: int = 32, seed: int = 0, folded: bool = True,
                              workers: int = 1) -> ReproReport:
    """Treat the conditioned actor as an archive: condition it on every stored descriptor.

    With ``folded=True`` each cell's descriptor is baked into the first layer;
    otherwise the descriptor is appended to every observation.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    cells = archive.occupied_indices()
    if len(cells) == 0:
        raise ValueError("archive is empty")
    targets = archive.descriptors[cells]
    seeds = _cell_seeds(seed, cells, n_reps)
    if folded:
        policies = fold_actor(actor, actor_arch, targets, env.state_dim)
        fitness, desc = _reevaluate(env, policies, policy_architecture(actor_arch, env.state_dim), seeds,
                                    workers=workers)
    else:
        policies = np.repeat(actor[None], len(cells), axis=0)
        fitness, desc = _reevaluate(env, policies, actor_arch, seeds, conditions=targets, workers=workers)
    return _report(archive, cells, fitness, desc, n_reps)


def aggregate_seeds(series: list[np.ndarray]) -> dict[str, np.ndarray]:
    """Median and first/third quartiles across seeds (linear interpolation).

    ``series`` holds one array per seed, each ``(generations,)`` or
    ``(generations, metrics)``; all must share a shape.
    """
    if not series:
        raise ValueError("need at least one seed")
    shapes = {np.shape(s) for s in series}
    if len(shapes) != 1:
        raise ValueError(f"series lengths differ across seeds: {sorted(shapes)}")
    stack = np.stack([np.asarray(s, dtype=np.float64) for s in series])
    q1, med, q3 = np.percentile(stack, [25, 50, 75], axis=0, method="linear")
    return {"median": med, "q1": q1, "q3": q3}
