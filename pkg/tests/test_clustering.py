import numpy as np
import pytest

from promptsearch.backends.types import DimMismatch

from promptsearch.clustering import (
    ClusterAssignment,
    ClusterPosterior,
    DegenerateEvidence,
    EmptyCluster,
    LIKELIHOOD_FLOOR,
    bayesian_update,
    carry_prior_forward,
    compute_likelihoods,
    kmeans_fit,
    uniform_prior,
)


def test_two_obvious_groups():
    pts = [[0, 0], [0.1, 0], [0, 0.1], [10, 10], [10.1, 10], [10, 10.1]]
    a = kmeans_fit(pts, 2, seed=3)
    assert a.labels == [0, 0, 0, 1, 1, 1]
    assert a.k_effective == 2
    np.testing.assert_allclose(a.centroids[1], [10.0333333, 10.0333333], atol=1e-6)


def test_k_capped_by_distinct_points():
    a = kmeans_fit([[1, 1], [1, 1], [2, 2]], 5, seed=0)
    assert a.k_effective == 2 and sorted(set(a.labels)) == [0, 1]


def test_same_seed_same_partition():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((20, 4)).tolist()
    assert kmeans_fit(pts, 3, 9).to_dict() == kmeans_fit(pts, 3, 9).to_dict()


def test_bad_input():
    with pytest.raises(ValueError):
        kmeans_fit([[1, 2]], 0, 0)
    with pytest.raises(DimMismatch):
        kmeans_fit([[1, 2], [1]], 1, 0)


def test_likelihoods_map_scores_to_unit_interval():
    a = ClusterAssignment([0, 0, 1, 1], [[0], [1]], 0.0, 2)
    assert compute_likelihoods(a, [5, 5, 1, 1]) == [1.0, LIKELIHOOD_FLOOR]
    assert compute_likelihoods(a, [3, 3, 2, 4]) == [0.5, 0.5]
    with pytest.raises(EmptyCluster):
        compute_likelihoods(ClusterAssignment([0, 0], [[0], [1]], 0.0, 2), [3, 3])


def test_bayesian_update_and_ties():
    post = bayesian_update([0.5, 0.5], [0.2, 0.6])
    assert post.posteriors == pytest.approx([0.25, 0.75])
    assert post.best == 1
    assert bayesian_update([0.5, 0.5], [0.4, 0.4]).best == 0
    with pytest.raises(DegenerateEvidence):
        bayesian_update([1.0, 0.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        bayesian_update([0.6, 0.6], [1, 1])


def test_carry_prior_forward():
    prev = ClusterPosterior([0.5, 0.5], [1, 1], [0.8, 0.2], 0)
    pri = carry_prior_forward(prev, [[0, 0], [10, 10]], [[0.1, 0], [0, 0.1], [20, 20]])
    # both near-origin clusters split cluster 0's mass; the far one takes cluster 1's
    assert pri == pytest.approx([0.4, 0.4, 0.2])
    orphaned = carry_prior_forward(prev, [[0, 0], [10, 10]], [[0, 0]])
    assert orphaned == pytest.approx([1.0])
    assert uniform_prior(4) == [0.25] * 4


def test_worked_posterior_example():
    post = bayesian_update([0.6, 0.2, 0.2], [0.1, 0.4, 0.5])
    assert post.posteriors == pytest.approx([0.25, 1 / 3, 5 / 12], abs=1e-12)
    assert post.best == 2
    flat = bayesian_update(uniform_prior(3), [0.5, 0.5, 0.5])
    assert flat.posteriors == pytest.approx(flat.priors) and flat.best == 0
