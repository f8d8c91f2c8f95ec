"""CVT MAP-Elites archive."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree


class EmptyArchiveError(LookupError):
    pass


def _lloyd(samples: np.ndarray, k: int, iterations: int) -> np.ndarray:
    centroids = samples[:k].copy()
    for _ in range(iterations):
        _, labels = cKDTree(centroids).query(samples, k=1)
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, samples)
        filled = counts > 0
        new = centroids.copy()
        new[filled] = sums[filled] / counts[filled, None]
        if np.array_equal(new, centroids):
            break
        centroids = new
    return centroids


@lru_cache(maxsize=16)
def _cvt_cached(k: int, dim: int, n_samples: int, seed: int, iterations: int) -> np.ndarray:
    samples = np.random.default_rng(seed).uniform(0.0, 1.0, size=(n_samples, dim))
    return _lloyd(samples, k, iterations)


def cvt_init(k: int, descriptor_dim: int, n_samples: int | None = None, seed: int = 0,
             iterations: int = 100) -> np.ndarray:
    """K centroids of a centroidal Voronoi tessellation of the unit box.

    Lloyd's algorithm over ``n_samples`` uniform samples (default ``50 * k``),
    started from the first ``k`` samples.
    """
    if n_samples is None:
        n_samples = 50 * k
    if k < 1 or descriptor_dim < 1:
        raise ValueError("need k >= 1 and descriptor_dim >= 1")
    if k > n_samples:
        raise ValueError(f"k={k} exceeds n_samples={n_samples}")
    return _cvt_cached(int(k), int(descriptor_dim), int(n_samples), int(seed), int(iterations)).copy()


def nearest_centroid(centroids: np.ndarray, descriptors: np.ndarray):
    """Index of the closest centroid (Euclidean), lowest index on ties.

    Accepts a single descriptor or an ``(M, d)`` batch.
    """
    q = np.asarray(descriptors, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    diff = q[:, None, :] - centroids[None, :, :]
    idx = np.argmin(np.einsum("mkd,mkd->mk", diff, diff), axis=1)
    return int(idx[0]) if single else idx


class AddKind(enum.Enum):
    INSERTED = "inserted-new"
    REPLACED = "replaced"
    REJECTED = "rejected"


@dataclass(frozen=True)
class AddOutcome:
    kind: AddKind
    improvement: float
    cell: int
    error: str | None = None

    @property
    def added(self) -> bool:
        return self.kind is not AddKind.REJECTED


class Archive:
    """At most one elite per CVT cell.

    Storage is column-wise: ``genotypes`` ``(K, n)``, ``fitnesses`` ``(K,)``
    (NaN when empty), ``descriptors`` ``(K, d)`` and the boolean ``occupied``.
    """

    def __init__(self, centroids: np.ndarray, genotype_dim: int):
        centroids = np.asarray(centroids, dtype=np.float64)
        if centroids.ndim != 2 or len(centroids) < 1:
            raise ValueError("centroids must be a non-empty (K, d) array")
        self.centroids = centroids
        self.genotype_dim = int(genotype_dim)
        k, d = centroids.shape
        self.genotypes = np.zeros((k, self.genotype_dim))
        self.fitnesses = np.full(k, np.nan)
        self.descriptors = np.full((k, d), np.nan)
        self.occupied = np.zeros(k, dtype=bool)

    @property
    def n_cells(self) -> int:
        return len(self.centroids)

    @property
    def descriptor_dim(self) -> int:
        return self.centroids.shape[1]

    def __len__(self):
        return int(self.occupied.sum())

    def copy(self) -> "Archive":
        a = Archive(self.centroids.copy(), self.genotype_dim)
        a.genotypes = self.genotypes.copy()
        a.fitnesses = self.fitnesses.copy()
        a.descriptors = self.descriptors.copy()
        a.occupied = self.occupied.copy()
        return a

    def occupied_indices(self) -> np.ndarray:
        return np.flatnonzero(self.occupied)

    def add(self, genotype: np.ndarray, fitness: float, descriptor: np.ndarray) -> AddOutcome:
        """Elitist insertion; a candidate must be strictly fitter to replace."""
        descriptor = np.asarray(descriptor, dtype=np.float64)
        cell = nearest_centroid(self.centroids, descriptor)
        if not math.isfinite(fitness) or not np.isfinite(descriptor).all():
            return AddOutcome(AddKind.REJECTED, 0.0, cell, error="non-finite fitness or descriptor")
        if not self.occupied[cell]:
            kind, improvement = AddKind.INSERTED, float(fitness)
        elif self.fitnesses[cell] < fitness:
            kind, improvement = AddKind.REPLACED, float(fitness - self.fitnesses[cell])
        else:
            return AddOutcome(AddKind.REJECTED, 0.0, cell)
        self.genotypes[cell] = genotype
        self.fitnesses[cell] = fitness
        self.descriptors[cell] = descriptor
        self.occupied[cell] = True
        return AddOutcome(kind, improvement, cell)

    def add_batch(self, genotypes, fitnesses, descriptors) -> list[AddOutcome]:
        return [self.add(g, float(f), d) for g, f, d in zip(genotypes, fitnesses, descriptors)]

    def metrics(self) -> tuple[float, float, float]:
        """``(qd_score, coverage, max_fitness)``; max fitness is NaN when empty."""
        fit = self.fitnesses[self.occupied]
        if len(fit) == 0:
            return 0.0, 0.0, math.nan
        return float(np.sum(fit)), len(fit) / self.n_cells, float(np.max(fit))

    def select_uniform(self, count: int, rng: np.random.Generator):
        """``count`` i.i.d. uniform draws over occupied cells.

        Returns ``(genotypes, descriptors, cell_indices)``.
        """
        idx = self.occupied_indices()
        if len(idx) == 0:
            raise EmptyArchiveError("cannot select from an empty archive")
        cells = idx[rng.integers(0, len(idx), size=count)]
        return self.genotypes[cells].copy(), self.descriptors[cells].copy(), cells

    def check_consistency(self) -> bool:
        """Every occupant's descriptor maps back to its own cell."""
        idx = self.occupied_indices()
        if len(idx) == 0:
            return True
        return bool(np.array_equal(nearest_centroid(self.centroids, self.descriptors[idx]), idx))
