"""Sample-quality metrics: kernel MMD, mode coverage, k-means centroid matching."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist


@dataclass(frozen=True)
class MmdResult:
    mmd2: float
    bandwidth: float
    n_a: int
    n_b: int


def median_bandwidth(A: np.ndarray, B: np.ndarray | None = None, max_points: int = 2000,
                     seed: int = 0) -> float:
    """Median pairwise distance of A (union B), on a fixed-seed subsample if large."""
    X = np.asarray(A, dtype=float) if B is None else np.vstack([A, B])
    if len(X) > max_points:
        X = X[np.random.default_rng(seed).choice(len(X), max_points, replace=False)]
    return float(np.median(pdist(X)))


def _kernel_mean(X: np.ndarray, Y: np.ndarray, bw: float, chunk: int = 2048) -> float:
    total = 0.0
    for i in range(0, len(X), chunk):
        d2 = cdist(X[i:i + chunk], Y, "sqeuclidean")
        total += np.exp(-d2 / (2.0 * bw * bw)).sum()
    return total / (len(X) * len(Y))


def mmd2(A, B, bandwidth: float | None = None) -> MmdResult:
    """Biased (V-statistic) squared MMD with kernel ``exp(-|a-b|^2 / (2 bw^2))``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if len(A) < 2 or len(B) < 2:
        raise ValueError("need at least two samples on each side")
    bw = median_bandwidth(A, B) if bandwidth is None else float(bandwidth)
    if not bw > 0:
        raise ValueError("bandwidth must be positive")
    val = _kernel_mean(A, A, bw) + _kernel_mean(B, B, bw) - 2.0 * _kernel_mean(A, B, bw)
    return MmdResult(max(val, 0.0), bw, len(A), len(B))


@dataclass(frozen=True)
class ModeCoverage:
    modes_hit: int
    total_modes: int
    high_quality_fraction: float
    counts: tuple[int, ...] = ()


def mode_coverage(samples, centers, r: float) -> ModeCoverage:
    """A mode is hit when at least ``max(10, 0.5 * n / k * 0.1)`` samples lie within ``r`` of it."""
    if r <= 0:
        raise ValueError("r must be positive")
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    C = np.atleast_2d(np.asarray(centers, dtype=float))
    d = cdist(X, C)
    near = d.min(axis=1) <= r
    counts = np.bincount(d.argmin(axis=1)[near], minlength=len(C))
    need = max(10.0, 0.5 * len(X) / len(C) * 0.1)
    return ModeCoverage(int((counts >= need).sum()), len(C), float(near.mean()), tuple(int(c) for c in counts))


# -- k-means ----------------------------------------------------------------


@dataclass
class KMeansResult:
    centroids: np.ndarray      # sorted by descending cluster size
    labels: np.ndarray         # indices into ``centroids``
    sizes: np.ndarray
    inertia_history: list[float]


def _plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(len(X))]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(len(X))
        else:
            idx = rng.choice(len(X), p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans_fit(samples, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from k-means++ seeds; empty clusters are reseeded at the farthest point."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(X) < k:
        raise ValueError("need at least k samples")
    rng = np.random.default_rng(seed)
    C = _plusplus(X, k, rng)
    history = []
    labels = None
    for _ in range(max_iter):
        d2 = cdist(X, C, "sqeuclidean")
        new = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(X)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = labels == j
            if members.any():
                C[j] = X[members].mean(axis=0)
            else:
                far = d2[np.arange(len(X)), labels].argmax()
                C[j] = X[far]
                labels[far] = j
                d2[far] = 0.0
    sizes = np.bincount(labels, minlength=k)
    order = np.lexsort((np.arange(k), -sizes))
    remap = np.empty(k, dtype=int)
    remap[order] = np.arange(k)
    return KMeansResult(C[order].copy(), remap[labels], sizes[order], history)


def kmeans(samples, k: int, seed: int = 0, max_iter: int = 300) -> np.ndarray:
    return kmeans_fit(samples, k, seed, max_iter).centroids


# -- centroid comparison ----------------------------------------------------


def optimal_matching(cost: np.ndarray) -> list[tuple[int, int]]:
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def greedy_matching(cost: np.ndarray) -> list[tuple[int, int]]:
    """Repeatedly take the globally cheapest remaining pair (cross-check only)."""
    cost = np.array(cost, dtype=float)
    pairs = []
    for _ in range(min(cost.shape)):
        i, j = np.unravel_index(np.argmin(cost), cost.shape)
        pairs.append((int(i), int(j)))
        cost[i, :] = np.inf
        cost[:, j] = np.inf
    return sorted(pairs)


@dataclass
class CentroidReport:
    k: int
    real_centroids: np.ndarray
    gen_centroids: np.ndarray
    matching: list[tuple[int, int]]
    distances: np.ndarray
    mean_matched_distance: float

    def to_csv(self, path) -> None:
        d = self.real_centroids.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["real_index", "gen_index"] + [f"real_{j}" for j in range(d)]
                       + [f"gen_{j}" for j in range(d)] + ["distance"])
            for (i, j), dist in zip(self.matching, self.distances):
                w.writerow([i, j] + [repr(float(v)) for v in self.real_centroids[i]]
                           + [repr(float(v)) for v in self.gen_centroids[j]] + [repr(float(dist))])


def centroid_compare(real, gen, k: int = 9, seed: int = 0) -> CentroidReport:
    """Cluster both sets with the same seed and match centroids by optimal assignment."""
    real = np.atleast_2d(np.asarray(real, dtype=float))
    gen = np.atleast_2d(np.asarray(gen, dtype=float))
    if len(real) < k or len(gen) < k:
        raise ValueError("both sample sets need at least k rows")
    cr = kmeans(real, k, seed)
    cg = kmeans(gen, k, seed)
    cost = cdist(cr, cg)
    match = optimal_matching(cost)
    dist = np.array([cost[i, j] for i, j in match])
    return CentroidReport(k, cr, cg, match, dist, float(dist.mean()))
