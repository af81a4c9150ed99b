"""K-Means over candidate embeddings with Bayesian cluster re-weighting."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .backends.types import DimMismatch, EmbeddingVector

LIKELIHOOD_FLOOR = 1e-6
MAX_ITER = 100
TOL = 1e-6
N_INIT = 10


class EmptyCluster(ValueError):
    pass


class DegenerateEvidence(ValueError):
    pass


@dataclass
class ClusterAssignment:
    labels: List[int]
    centroids: List[List[float]]
    inertia: float
    k_effective: int

    def members(self, j: int) -> List[int]:
        return [i for i, lab in enumerate(self.labels) if lab == j]

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "centroids": [list(c) for c in self.centroids],
            "inertia": self.inertia,
            "k_effective": self.k_effective,
        }


@dataclass
class ClusterPosterior:
    priors: List[float]
    likelihoods: List[float]
    posteriors: List[float]
    best: int

    def to_dict(self):
        return {
            "priors": list(self.priors),
            "likelihoods": list(self.likelihoods),
            "posteriors": list(self.posteriors),
            "best": self.best,
        }

    @classmethod
    def from_dict(cls, d) -> "ClusterPosterior":
        return cls(list(d["priors"]), list(d["likelihoods"]), list(d["posteriors"]), int(d["best"]))


def _as_matrix(points: Sequence) -> np.ndarray:
    if not len(points):
        raise ValueError("points must be non-empty")
    rows = [p.values if isinstance(p, EmbeddingVector) else tuple(p) for p in points]
    dims = {len(r) for r in rows}
    if len(dims) != 1:
        raise DimMismatch(f"points have differing dimensions {sorted(dims)}")
    x = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("points must be finite")
    return x


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[int(rng.integers(n))]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            break
        idx = int(rng.choice(n, p=d2 / total))
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(x: np.ndarray, centers: np.ndarray):
    labels = np.zeros(len(x), dtype=int)
    for _ in range(MAX_ITER):
        labels = _sq_dists(x, centers).argmin(axis=1)
        new = centers.copy()
        for j in range(len(centers)):
            mask = labels == j
            if mask.any():
                new[j] = x[mask].mean(axis=0)
            else:
                # re-seed an empty cluster at the point worst served by its centroid
                far = int(((x - centers[labels]) ** 2).sum(axis=1).argmax())
                new[j] = x[far]
                labels[far] = j
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift <= TOL:
            break
    labels = _sq_dists(x, centers).argmin(axis=1)
    return labels, centers


def _hartigan(x: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Move single points while doing so strictly lowers the within-cluster SSE."""
    labels = labels.copy()
    for _ in range(MAX_ITER):
        moved = False
        for i in range(len(x)):
            a = labels[i]
            n_a = int((labels == a).sum())
            if n_a <= 1:
                continue
            c_a = x[labels == a].mean(axis=0)
            cost_out = n_a / (n_a - 1) * float(((x[i] - c_a) ** 2).sum())
            best_b, best_gain = a, 0.0
            for b in range(k):
                if b == a:
                    continue
                members = labels == b
                n_b = int(members.sum())
                if n_b == 0:
                    continue
                c_b = x[members].mean(axis=0)
                cost_in = n_b / (n_b + 1) * float(((x[i] - c_b) ** 2).sum())
                gain = cost_out - cost_in
                if gain > 1e-12 and gain > best_gain:
                    best_b, best_gain = b, gain
            if best_b != a:
                labels[i] = best_b
                moved = True
        if not moved:
            break
    return labels


def _canonical(labels: np.ndarray) -> List[int]:
    remap = {}
    for lab in labels:
        remap.setdefault(int(lab), len(remap))
    return [remap[int(lab)] for lab in labels]


def _inertia(x: np.ndarray, labels: Sequence[int], k: int):
    lab = np.asarray(labels)
    centroids = np.array([x[lab == j].mean(axis=0) for j in range(k)])
    return centroids, float(((x - centroids[lab]) ** 2).sum())


def kmeans_fit(points: Sequence, k: int, seed: int, n_init: int = N_INIT) -> ClusterAssignment:
    """Seeded k-means++ / Lloyd, best of ``n_init`` restarts, then a single-point
    refinement pass so no lone relabelling can lower the inertia.

    ``k_effective`` is ``min(k, number of distinct points)``; labels are numbered by
    first appearance.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x = _as_matrix(points)
    distinct = len(np.unique(x, axis=0))
    k_eff = min(k, distinct)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        centers = _plus_plus(x, k_eff, rng)
        labels, _ = _lloyd(x, centers)
        labels = _hartigan(x, labels, k_eff)
        canon = _canonical(labels)
        if len(set(canon)) != k_eff:
            continue
        centroids, inertia = _inertia(x, canon, k_eff)
        if best is None or inertia < best[2] - 1e-12:
            best = (canon, centroids, inertia)
    if best is None:  # pragma: no cover - k_eff distinct points always admit a partition
        raise RuntimeError("k-means failed to produce a full partition")
    canon, centroids, inertia = best
    return ClusterAssignment(canon, centroids.tolist(), max(0.0, inertia), k_eff)


def uniform_prior(k: int) -> List[float]:
    if k < 1:
        raise ValueError("k must be >= 1")
    return [1.0 / k] * k


def compute_likelihoods(assignment: ClusterAssignment, scores: Sequence[float]) -> List[float]:
    """L_j = (mean score in cluster j - 1) / 4, clamped to [LIKELIHOOD_FLOOR, 1]."""
    if len(scores) != len(assignment.labels):
        raise ValueError("need one score per point")
    out = []
    for j in range(assignment.k_effective):
        member_scores = [float(scores[i]) for i in assignment.members(j)]
        if not member_scores:
            raise EmptyCluster(f"cluster {j} has no members")
        mean = sum(member_scores) / len(member_scores)
        out.append(min(1.0, max(LIKELIHOOD_FLOOR, (mean - 1.0) / 4.0)))
    return out


def argmax_lowest(values: Sequence[float]) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def bayesian_update(priors: Sequence[float], likelihoods: Sequence[float]) -> ClusterPosterior:
    if len(priors) != len(likelihoods) or not priors:
        raise ValueError("priors and likelihoods must be non-empty and equal length")
    priors = [float(p) for p in priors]
    likelihoods = [float(l) for l in likelihoods]
    if any(p < 0 or not math.isfinite(p) for p in priors) or abs(sum(priors) - 1.0) > 1e-9:
        raise ValueError("priors must be non-negative and sum to 1")
    if any(l < 0 or not math.isfinite(l) for l in likelihoods) or not any(likelihoods):
        raise ValueError("likelihoods must be non-negative and not all zero")
    evidence = sum(l * p for l, p in zip(likelihoods, priors))
    if evidence <= 0:
        raise DegenerateEvidence("sum of L_k * P_k is zero")
    posteriors = [l * p / evidence for l, p in zip(likelihoods, priors)]
    return ClusterPosterior(priors, likelihoods, posteriors, argmax_lowest(posteriors))


def carry_prior_forward(
    previous: ClusterPosterior,
    previous_centroids: Sequence[Sequence[float]],
    new_centroids: Sequence[Sequence[float]],
) -> List[float]:
    """Prior for the next round's clusters.

    Each new cluster takes an equal share of the posterior mass of its nearest previous
    centroid (ties to the lower index). Mass of previous clusters nobody chose is spread
    uniformly over all new clusters.
    """
    if len(previous.posteriors) != len(previous_centroids):
        raise ValueError("one previous centroid per posterior entry")
    old = _as_matrix(previous_centroids)
    new = _as_matrix(new_centroids)
    if old.shape[1] != new.shape[1]:
        raise DimMismatch("centroid dimensions differ between rounds")
    nearest = [argmax_lowest([-float(d) for d in row]) for row in _sq_dists(new, old)]
    takers = {j: nearest.count(j) for j in set(nearest)}
    masses = [previous.posteriors[j] / takers[j] for j in nearest]
    orphan = sum(p for j, p in enumerate(previous.posteriors) if j not in takers)
    masses = [m + orphan / len(new) for m in masses]
    total = sum(masses)
    if total <= 0:
        return uniform_prior(len(new))
    return [m / total for m in masses]
