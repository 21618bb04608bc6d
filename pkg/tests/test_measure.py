import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mfturnpike.errors import DimensionError
from mfturnpike.measure import (EmpiricalMeasure, TransportPlan, barycentric_projection, group_by_position,
                                optimal_assignment, wasserstein2, weighted_wasserstein)

from oracles import brute_force_w2


def test_identical_and_shuffled_measures_have_zero_distance():
    a = np.random.default_rng(0).normal(size=(6, 2))
    assert wasserstein2(a, a) == 0.0
    assert wasserstein2(a, a[::-1]) == pytest.approx(0.0, abs=1e-15)


def test_one_dimensional_examples():
    assert wasserstein2([0.0, 1.0], [1.0, 2.0]) == pytest.approx(brute_force_w2([0, 1], [1, 2])[0], abs=1e-15)
    assert wasserstein2([0.0, 1.0], [1.0, 2.0]) == pytest.approx(1.0, abs=1e-15)
    assert wasserstein2([0.0, 2.0], [1.0, 1.0]) == pytest.approx(1.0, abs=1e-15)


def test_weighted_wasserstein_along_given_plans():
    mu, nu = [0.0, 1.0], [1.0, 2.0]
    assert weighted_wasserstein(TransportPlan(perm=np.array([0, 1])), mu, nu) == pytest.approx(1.0)
    # crossed pairing 0 -> 2, 1 -> 1: cost (4 + 0) / 2
    assert weighted_wasserstein(TransportPlan(perm=np.array([1, 0])), mu, nu) == pytest.approx(np.sqrt(2.0))
    plan = optimal_assignment(mu, nu)
    assert weighted_wasserstein(plan, mu, nu) == pytest.approx(wasserstein2(mu, nu), abs=1e-15)
    stoch = TransportPlan(matrix=np.full((2, 2), 0.25))
    assert weighted_wasserstein(stoch, mu, nu) >= wasserstein2(mu, nu)


def test_size_mismatch():
    with pytest.raises(DimensionError):
        wasserstein2(np.zeros((3, 1)), np.zeros((4, 1)))
    with pytest.raises(DimensionError):
        wasserstein2(np.zeros((3, 1)), np.zeros((3, 2)))


def test_plan_validation():
    with pytest.raises(ValueError):
        TransportPlan(perm=np.array([0, 0, 1]))
    with pytest.raises(ValueError):
        TransportPlan(matrix=np.full((2, 2), 0.3))


def test_grouping_examples():
    assert group_by_position(np.arange(4.0)[:, None], 1e-9).n_groups == 4
    part = group_by_position(np.array([[1.0], [1.0], [2.0]]), 1e-9)
    assert list(part.labels) == [0, 0, 1]
    eps = 4e-10
    assert group_by_position(np.array([[0.0], [eps], [2 * eps]]), 1e-9 * 0.5).n_groups == 1


def test_barycentric_projection_examples():
    part, lam = barycentric_projection(EmpiricalMeasure(np.array([[0.0, 1.0], [0.0, 3.0]])), 1)
    assert lam[:, 0].tolist() == [2.0]
    part, lam = barycentric_projection(np.array([[1.0, 0.0], [1.0, 6.0], [2.0, 5.0]]), 1)
    assert part.representatives[:, 0].tolist() == [1.0, 2.0]
    assert lam[:, 0].tolist() == [3.0, 5.0]
    pts = np.random.default_rng(1).normal(size=(5, 2))
    _, lam = barycentric_projection(pts, 1)
    assert np.array_equal(lam, pts[:, 1:])


small = st.integers(1, 6).flatmap(lambda n: st.integers(1, 3).flatmap(lambda k: st.tuples(
    arrays(float, (n, k), elements=st.floats(-5, 5)), arrays(float, (n, k), elements=st.floats(-5, 5)))))


@settings(max_examples=100, deadline=None)
@given(small)
def test_matches_brute_force(pair):
    a, b = pair
    assert wasserstein2(a, b) == pytest.approx(brute_force_w2(a, b)[0], abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 8), st.integers(1, 3))
def test_metric_axioms(seed, n, k):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.normal(size=(n, k)) for _ in range(3))
    assert wasserstein2(a, b) == pytest.approx(wasserstein2(b, a), abs=1e-10)
    assert wasserstein2(a, c) <= wasserstein2(a, b) + wasserstein2(b, c) + 1e-10
    perm = rng.permutation(n)
    assert wasserstein2(a, b) <= weighted_wasserstein(TransportPlan(perm=perm), a, b) + 1e-12


@settings(max_examples=50, deadline=None)
@given(arrays(float, (12, 2), elements=st.sampled_from([0.0, 1.0, 2.5])))
def test_grouping_is_a_partition(pts):
    part = group_by_position(pts, 1e-9)
    assert len(part.labels) == len(pts)
    assert sorted(set(part.labels.tolist())) == list(range(part.n_groups))
    for g in range(part.n_groups):
        members = part.members(g)
        assert np.all(np.abs(pts[members] - part.representatives[g]) <= 1e-9)
    assert part.n_groups == len({tuple(p) for p in pts})
