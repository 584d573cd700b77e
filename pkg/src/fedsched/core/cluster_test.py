import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score
from testfixtures import ShouldRaise, compare

from fedsched.core.cluster import VARIANCE_FLOOR, drift_and_maybe_recluster, kmeans
from fedsched.core.features import EnvFeatureVector, PrivatizedFeatures, privatize
from fedsched.core.network import InvalidParameter


def _released(values):
    return PrivatizedFeatures(values=values, epsilon=1.0)


@pytest.fixture
def features():
    return {
        0: _released([0.0, 0.0]),
        1: _released([0.1, 0.0]),
        2: _released([5.0, 5.0]),
        3: _released([5.1, 5.0]),
    }


def test_kmeans__separates_two_groups(features):
    state = kmeans(features, 2, seed=0)

    compare(state.assignments[0], state.assignments[1])
    compare(state.assignments[2], state.assignments[3])
    assert state.assignments[0] != state.assignments[2]
    compare(state.n_clusters, 2)


def test_kmeans__standardizes_features(features):
    state = kmeans(features, 2, seed=0)

    points = np.array([state.standardized[m] for m in sorted(state.standardized)])
    assert np.allclose(points.mean(axis=0), 0.0)
    assert np.allclose(points.std(axis=0), 1.0)
    compare(state.features[2], (5.0, 5.0))


def test_kmeans__recovers_populations_after_privatization():
    truth = [0] * 6 + [1] * 6

    for seed in range(20):
        rng = np.random.default_rng(seed)
        released = {
            m: privatize(EnvFeatureVector(values=[10.0 * label] * 8), 1.0, rng)
            for m, label in enumerate(truth)
        }

        state = kmeans(released, 2, seed=seed)

        labels = [state.assignments[m] for m in range(len(truth))]
        assert adjusted_rand_score(truth, labels) >= 0.9


def test_kmeans__identical_features_floor_the_variances():
    state = kmeans({m: _released([1.0, 1.0]) for m in range(3)}, 2, seed=0)

    assert all(v >= VARIANCE_FLOOR for v in state.intra_variances)
    compare(state.global_variance, VARIANCE_FLOOR)


def test_kmeans__same_seed_is_reproducible(features):
    compare(kmeans(features, 2, seed=3).assignments, kmeans(features, 2, seed=3).assignments)


@pytest.mark.parametrize("clusters", [0, 5])
def test_kmeans__cluster_count_outside_domains_raises_InvalidParameter(features, clusters):
    with ShouldRaise(InvalidParameter) as exc:
        kmeans(features, clusters, seed=0)

    compare(exc.raised.name, "clusters")


def test_drift_and_maybe_recluster__unchanged_features_keep_assignments(features):
    state = kmeans(features, 2, seed=0)

    new_state, reclustered = drift_and_maybe_recluster(state, features, 0.1, 2, seed=1)

    compare(reclustered, False)
    compare(new_state.assignments, state.assignments)
    compare(new_state.drift, {0: 0.0, 1: 0.0, 2: 0.0, 3: 0.0})


def test_drift_and_maybe_recluster__large_drift_reclusters(features):
    state = kmeans(features, 2, seed=0)
    moved = dict(features)
    moved[1] = _released([5.0, 5.1])

    new_state, reclustered = drift_and_maybe_recluster(
        state, moved, 0.1, 2, seed=1, round_idx=10
    )

    compare(reclustered, True)
    compare(new_state.round, 10)
    assert new_state.drift[1] > 0.1
    compare(new_state.assignments[1], new_state.assignments[2])


def test_drift_and_maybe_recluster__small_drift_updates_features_only(features):
    state = kmeans(features, 2, seed=0)
    moved = dict(features)
    moved[0] = _released([0.05, 0.0])

    new_state, reclustered = drift_and_maybe_recluster(state, moved, 0.1, 2, seed=1)

    compare(reclustered, False)
    compare(new_state.assignments, state.assignments)
    compare(new_state.features[0], (0.05, 0.0))
    assert np.isclose(new_state.drift[0], 0.05)


def test_drift_and_maybe_recluster__unknown_domain_reclusters(features):
    state = kmeans({m: features[m] for m in (0, 1, 2)}, 2, seed=0)

    new_state, reclustered = drift_and_maybe_recluster(state, features, 10.0, 2, seed=1)

    compare(reclustered, True)
    compare(sorted(new_state.assignments), [0, 1, 2, 3])
    compare(new_state.drift[3], 0.0)


def test_kmeans__empty_cluster_takes_a_duplicate_point():
    state = kmeans({m: _released([1.0, 1.0]) for m in range(4)}, 2, seed=0)

    compare(sorted(set(state.assignments.values())), [0, 1])


@pytest.mark.parametrize("seed", range(5))
def test_kmeans__duplicates_still_fill_every_cluster(seed):
    features = {0: _released([0.0, 0.0]), 1: _released([0.0, 0.0]), 2: _released([4.0, 4.0])}

    state = kmeans(features, 3, seed=seed)

    compare(sorted(state.assignments.values()), [0, 1, 2])


def test_drift_and_maybe_recluster__no_features_raise_InvalidParameter(features):
    state = kmeans(features, 2, seed=0)

    with ShouldRaise(InvalidParameter) as exc:
        drift_and_maybe_recluster(state, {}, 0.1, 2, seed=1)

    compare(exc.raised.name, "domains")
