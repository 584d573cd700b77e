import math

import numpy as np
import pytest
from testfixtures import ShouldRaise, compare

from fedsched.core.archgen import (
    ArchMode,
    ArchParams,
    CapabilityVector,
    NotEnoughDomains,
    assign_type,
    capability_score,
    capability_vector,
    effective_resource,
    generate_architectures,
    size_personal_zone,
)
from fedsched.core.topology import Server, Tier


def _vector(domain_id, scale):
    return CapabilityVector(
        domain_id=domain_id,
        static=(4.0 * scale, 1.5 * scale, 2048.0 * scale, 80.0 * scale),
        alpha=(1.0, 1.0, 1.0, 1.0),
        beta=(0.0, 0.0, 0.0, 0.0),
        util=(0.0, 0.0, 0.0, 0.0),
    )


@pytest.fixture
def params() -> ArchParams:
    return ArchParams(k_arch=3, depth_bounds=(1, 3), width_bounds=(4, 8))


def test_assign_type__high_score_maps_to_most_complex_type():
    compare(assign_type(0.7, 3), 3)


@pytest.mark.parametrize("score,expected", [(0.0, 1), (0.1, 1), (0.5, 4), (1.0, 8)])
def test_assign_type__scores_map_to_ceil_buckets(score, expected):
    compare(assign_type(score, 8), expected)


def test_assign_type__is_monotone_and_in_range():
    rng = np.random.default_rng(0)

    for _ in range(1000):
        k_arch = int(rng.integers(1, 17))
        low, high = sorted(rng.uniform(0.0, 1.0, size=2))

        assert 1 <= assign_type(low, k_arch) <= assign_type(high, k_arch) <= k_arch


def test_size_personal_zone__grows_linearly_with_score():
    compare(size_personal_zone(0.0, (2, 10), (16, 512), 1.0), (2, 16))
    compare(size_personal_zone(0.5, (2, 10), (16, 512), 1.0), (6, 264))
    compare(size_personal_zone(1.0, (2, 10), (16, 512), 1.0), (10, 512))


def test_size_personal_zone__alpha_scales_the_score():
    compare(size_personal_zone(1.0, (2, 10), (16, 512), 0.5), (6, 264))


def test_effective_resource__utilization_reduces_capacity():
    compare(effective_resource(10.0, 1.0, 0.5, 0.4), 8.0)
    compare(effective_resource(10.0, 2.0, 0.0, 0.9), 20.0)


def test_effective_resource__overload_clamps_to_zero():
    compare(effective_resource(10.0, 1.0, 2.0, 0.8), 0.0)


def test_capability_vector__aggregates_domain_servers():
    servers = [
        Server(
            id=1,
            tier=Tier.IOT,
            freq_mhz=1000.0,
            ram_gb=1.0,
            cores=4,
            power_compute_w=3.0,
            power_transmit_w=1.0,
            utilization=0.2,
        ),
        Server(
            id=2,
            tier=Tier.CLOUD,
            freq_mhz=3000.0,
            ram_gb=3.0,
            cores=8,
            power_compute_w=90.0,
            power_transmit_w=10.0,
            utilization=0.4,
        ),
    ]

    vector = capability_vector(0, servers, 1.6e8)

    compare(vector.static, (12.0, 2.0, 4096.0, 160.0))
    compare(vector.beta, (1.0, 1.0, 0.0, 0.0))
    assert np.allclose(vector.entries, (12.0 * 0.7, 2.0 * 0.7, 4096.0, 160.0))


def test_capability_score__larger_domain_scores_higher():
    scores = capability_score([_vector(0, 1.0), _vector(1, 2.0), _vector(2, 4.0)])

    values = [s.value for s in scores]
    compare(values, sorted(values))
    assert all(0.0 < v < 1.0 for v in values)
    assert np.isclose(sum(scores[0].weights), 1.0)


def test_capability_score__identical_domains_score_one_half():
    scores = capability_score([_vector(0, 1.0), _vector(1, 1.0)])

    compare([s.value for s in scores], [0.5, 0.5])


def test_capability_score__weights_favor_the_weighted_resource():
    small_cores = CapabilityVector(
        domain_id=0, static=(2.0, 3.0), alpha=(1.0, 1.0), beta=(0.0, 0.0), util=(0.0, 0.0)
    )
    big_cores = CapabilityVector(
        domain_id=1, static=(8.0, 1.0), alpha=(1.0, 1.0), beta=(0.0, 0.0), util=(0.0, 0.0)
    )

    scores = capability_score([small_cores, big_cores], weights=[3.0, 1.0])

    assert scores[1].value > scores[0].value


def test_capability_score__single_domain_raises_NotEnoughDomains():
    with ShouldRaise(NotEnoughDomains) as exc:
        capability_score([_vector(0, 1.0)])

    compare(exc.raised.count, 1)


def test_generate_architectures__adaptive_orders_types_by_capability(params):
    vectors = [_vector(0, 1.0), _vector(1, 2.0), _vector(2, 4.0)]

    generated = generate_architectures(vectors, params, 12, 3, [0, 1, 2])

    assignments = [a for a, _ in generated]
    types = [a.arch_type for a in assignments]
    compare(types, sorted(types))
    for assignment, net in generated:
        compare(net.arch_type, assignment.arch_type)
        compare(len(net.personal), assignment.pers_depth)
        compare(net.personal[0].shape[1], assignment.pers_width)
        compare(net.parameter_count(), assignment.parameter_count)
        compare((net.input_width, net.n_actions), (12, 3))


def test_generate_architectures__fixed_small_uses_smallest_network(params):
    vectors = [_vector(0, 1.0), _vector(1, 4.0)]
    generated = generate_architectures(
        vectors, ArchParams(mode=ArchMode.FIXED_SMALL), 12, 3, [0, 1]
    )

    compare(
        [(a.arch_type, a.pers_depth, a.pers_width) for a, _ in generated], [(1, 1, 32)] * 2
    )


def test_generate_architectures__fixed_large_uses_upper_bounds():
    vectors = [_vector(0, 1.0), _vector(1, 4.0)]
    params = ArchParams(
        k_arch=2, depth_bounds=(1, 2), width_bounds=(4, 8), mode=ArchMode.FIXED_LARGE
    )

    generated = generate_architectures(vectors, params, 12, 3, [0, 1])

    compare([(a.arch_type, a.pers_depth, a.pers_width) for a, _ in generated], [(2, 2, 8)] * 2)


def test_generate_architectures__same_seeds_give_same_weights(params):
    vectors = [_vector(0, 1.0), _vector(1, 2.0)]

    first = generate_architectures(vectors, params, 12, 3, [5, 6])
    second = generate_architectures(vectors, params, 12, 3, [5, 6])

    for (_, a), (_, b) in zip(first, second):
        assert all(np.array_equal(x.weights, y.weights) for x, y in zip(a.layers(), b.layers()))


def _static_vector(domain_id, static):
    k = len(static)
    return CapabilityVector(
        domain_id=domain_id, static=static, alpha=(1.0,) * k, beta=(0.0,) * k, util=(0.0,) * k
    )


def test_capability_score__matches_hand_computed_scores():
    vectors = [
        _static_vector(0, (1.0, 10.0)),
        _static_vector(1, (2.0, 20.0)),
        _static_vector(2, (3.0, 60.0)),
    ]

    def sigmoid(x):
        return 1.0 / (1.0 + math.exp(-x))

    cores_std = math.sqrt(2.0 / 3.0)
    memory_std = math.sqrt(1400.0 / 3.0)
    expected = [
        0.5 * sigmoid((cores - 2.0) / cores_std) + 0.5 * sigmoid((memory - 30.0) / memory_std)
        for cores, memory in [(1.0, 10.0), (2.0, 20.0), (3.0, 60.0)]
    ]

    scores = capability_score(vectors)

    for score, value in zip(scores, expected):
        assert math.isclose(score.value, value, rel_tol=1e-12)
    compare(scores[2].means, (2.0, 30.0))


def test_capability_score__more_resources_never_lower_score_or_size(params):
    rng = np.random.default_rng(11)

    for _ in range(100):
        statics = rng.uniform(1.0, 10.0, size=(3, 4))
        grown = statics.copy()
        grown[0, rng.integers(4)] += rng.uniform(0.1, 5.0)

        before = capability_score([_static_vector(m, tuple(s)) for m, s in enumerate(statics)])
        after = capability_score([_static_vector(m, tuple(s)) for m, s in enumerate(grown)])

        assert after[0].value >= before[0].value - 1e-12

        def size(score):
            return (
                assign_type(score, params.k_arch),
                *size_personal_zone(score, params.depth_bounds, params.width_bounds, 1.0),
            )

        assert all(a >= b for a, b in zip(size(after[0].value), size(before[0].value)))
