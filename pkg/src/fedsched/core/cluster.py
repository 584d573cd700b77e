"""K-means clustering of privatized domain features and drift-triggered
re-clustering."""
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from attrs import define, evolve, field

from fedsched.core.features import PrivatizedFeatures
from fedsched.core.network import InvalidParameter

__all__ = [
    "ClusterState",
    "VARIANCE_FLOOR",
    "drift_and_maybe_recluster",
    "kmeans",
]

VARIANCE_FLOOR = 1e-6
MAX_ITERATIONS = 100


@define(frozen=True, kw_only=True)
class ClusterState:
    """Environment clusters of the domains.

    Distances, centroids and variances live in the standardized feature
    space; `features` keeps the privatized features as released.

    Arguments:
        assignments: cluster of every domain.
        centroids: centroid of every cluster.
        intra_variances: mean squared distance to the own centroid, per
            cluster.
        global_variance: mean squared distance to the global centroid.
        features: privatized features of every domain.
        standardized: standardized features of every domain.
        drift: feature displacement of every domain since the last release.
        round: federated round that produced the state.
    """

    assignments: Dict[int, int]
    centroids: Tuple[Tuple[float, ...], ...]
    intra_variances: Tuple[float, ...]
    global_variance: float
    features: Dict[int, Tuple[float, ...]]
    standardized: Dict[int, Tuple[float, ...]]
    drift: Dict[int, float] = field(factory=dict)
    round: int = 0

    @property
    def n_clusters(self) -> int:
        """Number of clusters."""
        return len(self.centroids)

    def distance_sq(self, m: int, n: int) -> float:
        """Squared Euclidean distance between two domains' standardized
        features."""
        diff = np.array(self.standardized[m]) - np.array(self.standardized[n])
        return float(diff @ diff)

    def cluster_variance(self, domain_id: int) -> float:
        """Intra-cluster variance of the domain's cluster."""
        return self.intra_variances[self.assignments[domain_id]]


def _standardize(matrix: np.ndarray) -> np.ndarray:
    std = matrix.std(axis=0)
    return (matrix - matrix.mean(axis=0)) / np.where(std > 0, std, 1.0)


def _plus_plus(points: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    chosen = [int(rng.integers(len(points)))]

    while len(chosen) < n_clusters:
        dist = np.min(
            ((points[:, None, :] - points[chosen][None, :, :]) ** 2).sum(axis=2), axis=1
        )
        if dist.sum() > 0:
            chosen.append(int(rng.choice(len(points), p=dist / dist.sum())))
        else:
            remaining = [i for i in range(len(points)) if i not in chosen]
            chosen.append(int(rng.choice(remaining)))

    return points[chosen].copy()


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    dist = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return dist.argmin(axis=1)


def _reseed(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # an empty cluster takes the point farthest from its centroid among
    # clusters holding more than one point
    for cluster in range(len(centroids)):
        if np.any(labels == cluster):
            continue

        counts = np.bincount(labels, minlength=len(centroids))
        dist = ((points - centroids[labels]) ** 2).sum(axis=1)
        dist[counts[labels] < 2] = -1.0
        far = int(dist.argmax())
        centroids[cluster] = points[far]
        labels[far] = cluster

    return labels


def _lloyd(points: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    centroids = _plus_plus(points, n_clusters, rng)
    labels = _reseed(points, centroids, _assign(points, centroids))

    for _ in range(MAX_ITERATIONS):
        for cluster in range(n_clusters):
            centroids[cluster] = points[labels == cluster].mean(axis=0)

        new_labels = _reseed(points, centroids, _assign(points, centroids))
        if np.array_equal(new_labels, labels):
            break

        labels = new_labels

    return labels


def _summarize(  # pylint: disable=too-many-arguments
    ids: List[int],
    raw: np.ndarray,
    labels: np.ndarray,
    n_clusters: int,
    round_idx: int,
    drift: Optional[Dict[int, float]] = None,
) -> ClusterState:
    if not ids:
        raise InvalidParameter("domains", 0, "at least 1")

    points = _standardize(raw)

    centroids = []
    variances = []
    for cluster in range(n_clusters):
        members = points[labels == cluster]
        centroid = members.mean(axis=0) if len(members) else np.zeros(points.shape[1])
        centroids.append(centroid)
        spread = ((members - centroid) ** 2).sum(axis=1).mean() if len(members) else 0.0
        variances.append(max(VARIANCE_FLOOR, float(spread)))

    glob = ((points - points.mean(axis=0)) ** 2).sum(axis=1).mean()

    return ClusterState(
        assignments={m: int(c) for m, c in zip(ids, labels)},
        centroids=tuple(tuple(float(x) for x in c) for c in centroids),
        intra_variances=tuple(variances),
        global_variance=max(VARIANCE_FLOOR, float(glob)),
        features={m: tuple(float(x) for x in row) for m, row in zip(ids, raw)},
        standardized={m: tuple(float(x) for x in row) for m, row in zip(ids, points)},
        drift=drift or {m: 0.0 for m in ids},
        round=round_idx,
    )


def kmeans(
    features: Mapping[int, PrivatizedFeatures], n_clusters: int, seed: int, round_idx: int = 0
) -> ClusterState:
    """Clusters domains on their z-scored privatized features with k-means++
    seeding and at most 100 Lloyd iterations.

    Raises:
        InvalidParameter: if there are more clusters than domains.
    """
    ids = sorted(features)
    if not 1 <= n_clusters <= len(ids):
        raise InvalidParameter("clusters", n_clusters, f"in [1, {len(ids)}]")

    raw = np.array([features[m].values for m in ids], dtype=np.float64)
    labels = _lloyd(_standardize(raw), n_clusters, np.random.default_rng(seed))

    return _summarize(ids, raw, labels, n_clusters, round_idx)


def drift_and_maybe_recluster(  # pylint: disable=too-many-arguments
    state: ClusterState,
    current: Mapping[int, PrivatizedFeatures],
    tau_drift: float,
    n_clusters: int,
    seed: int,
    round_idx: int = 0,
) -> Tuple[ClusterState, bool]:
    """Measures feature drift since the previous release and re-clusters when
    any domain moved by more than `tau_drift`.

    Domains without a previous release have drift 0; a domain unknown to the
    clustering forces a re-clustering. Without re-clustering the assignments
    are kept and the centroids and variances follow the new features.

    Returns:
        The new state and whether the domains were re-clustered.
    """
    ids = sorted(current)
    drift = {}
    for m in ids:
        if m in state.features:
            diff = current[m].as_array() - np.array(state.features[m])
            drift[m] = float(np.sqrt(diff @ diff))
        else:
            drift[m] = 0.0

    unknown = any(m not in state.assignments for m in ids)
    recluster = unknown or (bool(drift) and max(drift.values()) > tau_drift)

    if recluster:
        fresh = kmeans(current, min(n_clusters, len(ids)), seed, round_idx)
        return evolve(fresh, drift=drift), True

    raw = np.array([current[m].values for m in ids], dtype=np.float64)
    labels = np.array([state.assignments[m] for m in ids])

    return _summarize(ids, raw, labels, state.n_clusters, round_idx, drift), False
