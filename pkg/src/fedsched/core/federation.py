"""Similarity-weighted aggregation of shared zones inside environment
clusters."""
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from attrs import define, field

from fedsched.core.cluster import ClusterState, drift_and_maybe_recluster, kmeans
from fedsched.core.env import AppRecord
from fedsched.core.features import (
    FeatureExtractionDeferred,
    PrivatizedFeatures,
    extract_env_features,
    privatize,
)
from fedsched.core.network import (
    DualZoneNetwork,
    Zone,
    ZoneRecord,
    deserialize_zone,
    serialize_zone,
)
from fedsched.utils import warning

__all__ = [
    "AggregationError",
    "FedParams",
    "FederatedOutcome",
    "aggregate_shared",
    "federated_round",
    "similarity_weight",
    "weight_matrix",
]


@define(frozen=True, kw_only=True)
class FedParams:
    """Federation parameters.

    Arguments:
        epsilon: privacy budget of every feature release.
        tau_drift: drift that triggers re-clustering.
        clusters: number of environment clusters.
        beta_fed: damping of cross-cluster weights.
        window: applications summarized by the features.
        seed: base seed of clustering and privacy noise.
    """

    epsilon: float = 1.0
    tau_drift: float = 0.1
    clusters: int = 2
    beta_fed: float = 0.5
    window: int = 50
    seed: int = 0


class AggregationError(ValueError):
    """Raised when records combined by aggregation have different layouts."""

    def __init__(self, domain_id: int, peers: Sequence[int]) -> None:
        super().__init__(domain_id, peers)

        self.domain_id = domain_id
        self.peers = tuple(peers)

    def __str__(self):
        return f"domain {self.domain_id} cannot aggregate incompatible records of {self.peers}"


def similarity_weight(
    m: int, n: int, state: ClusterState, types: Mapping[int, int], beta_fed: float
) -> float:
    """Aggregation weight of domain `n`'s shared zone for domain `m`.

    Zero across architecture types, a Gaussian kernel on the intra-cluster
    variance inside a cluster and a damped kernel on the global variance
    across clusters.
    """
    if types[m] != types[n]:
        return 0.0

    dist = state.distance_sq(m, n)
    if state.assignments[m] == state.assignments[n]:
        return float(np.exp(-dist / (2.0 * state.cluster_variance(m))))

    return float(beta_fed * np.exp(-dist / (2.0 * state.global_variance)))


def weight_matrix(
    ids: Sequence[int], state: ClusterState, types: Mapping[int, int], beta_fed: float
) -> Dict[int, Dict[int, float]]:
    """Weights of every pair of clustered domains, `[m][n]`."""
    return {m: {n: similarity_weight(m, n, state, types, beta_fed) for n in ids} for m in ids}


def aggregate_shared(
    records: Mapping[int, ZoneRecord], weights: Mapping[int, Mapping[int, float]]
) -> Dict[int, ZoneRecord]:
    """Weighted average of shared-zone records for every domain.

    Peers are accumulated in ascending id order; a domain without positive
    weights keeps its own record.

    Raises:
        AggregationError: if positive-weight peers have different layouts.
    """
    result = {}

    for m in sorted(records):
        row = weights.get(m, {})
        peers = [n for n in sorted(records) if row.get(n, 0.0) > 0]

        if not peers:
            result[m] = records[m]
            continue

        shapes = {records[n].shapes for n in peers}
        if len(shapes) > 1:
            raise AggregationError(m, peers)

        total = sum(row[n] for n in peers)
        acc = np.zeros_like(records[peers[0]].values)
        for n in peers:
            acc = acc + row[n] * records[n].values

        result[m] = ZoneRecord(
            zone=Zone.SHARED, shapes=records[peers[0]].shapes, values=acc / total
        )

    return result


@define(frozen=True, kw_only=True)
class FederatedOutcome:
    """Result of a federated barrier.

    Arguments:
        state: clustering after the barrier, `None` while no domain has
            features.
        reclustered: whether the domains were re-clustered.
        weights: aggregation weights used, `[m][n]`.
        messages: shared-zone records exchanged with the coordinator.
        deferred: domains that skipped the barrier for lack of history.
    """

    state: Optional[ClusterState]
    reclustered: bool
    weights: Dict[int, Dict[int, float]] = field(factory=dict)
    messages: int = 0
    deferred: Tuple[int, ...] = ()


def federated_round(  # pylint: disable=too-many-arguments,too-many-locals
    round_idx: int,
    nets: Mapping[int, DualZoneNetwork],
    histories: Mapping[int, Sequence[AppRecord]],
    bandwidths: Mapping[int, float],
    state: Optional[ClusterState],
    params: FedParams,
) -> FederatedOutcome:
    """Runs a federated barrier and updates the shared zones in place.

    Features are extracted and privatized, drift is checked (clustering
    lazily on the first barrier), shared zones are collected, weighted,
    aggregated and redistributed; personal zones are untouched.

    Arguments:
        round_idx: current training round.
        nets: network of every domain.
        histories: finished applications of every domain.
        bandwidths: mean link bandwidth of every domain.
        state: clustering of the previous barrier.
        params: federation parameters.
    """
    released: Dict[int, PrivatizedFeatures] = {}
    deferred: List[int] = []

    for m in sorted(nets):
        try:
            features = extract_env_features(m, histories[m], bandwidths[m], params.window)

        except FeatureExtractionDeferred as exc:
            warning(str(exc))
            deferred.append(m)
            continue

        rng = np.random.default_rng([params.seed, m, round_idx])
        released[m] = privatize(features, params.epsilon, rng)

    if not released:
        return FederatedOutcome(state=state, reclustered=False, deferred=tuple(deferred))

    n_clusters = min(params.clusters, len(released))
    seed = params.seed + round_idx

    if state is None:
        state = kmeans(released, n_clusters, seed, round_idx)
        reclustered = True
    else:
        state, reclustered = drift_and_maybe_recluster(
            state, released, params.tau_drift, n_clusters, seed, round_idx
        )

    ids = sorted(released)
    types = {m: nets[m].arch_type for m in ids}
    weights = weight_matrix(ids, state, types, params.beta_fed)

    records = {m: serialize_zone(nets[m], Zone.SHARED) for m in ids}
    aggregated = aggregate_shared(records, weights)

    for m in ids:
        deserialize_zone(nets[m], aggregated[m])

    return FederatedOutcome(
        state=state,
        reclustered=reclustered,
        weights=weights,
        messages=2 * len(ids),
        deferred=tuple(deferred),
    )
