import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfd import functional, space, transport
from pfd._validation import DomainError
from pfd.oracles import transport_lp_oracle

seeds = st.integers(0, 2**32 - 1)


def _instance(seed, n):
    rng = space.make_rng(seed)
    return rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n)), transport.MetricSpace.random(rng, n)


def _check_solution(res, mu, nu, m):
    np.testing.assert_allclose(res.plan.sum(axis=1), mu, atol=1e-10)
    np.testing.assert_allclose(res.plan.sum(axis=0), nu, atol=1e-10)
    assert np.all(res.plan >= -1e-15)
    assert abs(res.value - (np.dot(res.potential, mu) - np.dot(res.potential, nu))) <= 1e-8
    assert transport.lipschitz_constant(res.potential, m) <= 1 + 1e-9
    assert res.potential[0] == 0.0


def test_metric_validation():
    with pytest.raises(DomainError):
        transport.MetricSpace([[0.0, 1.0], [2.0, 0.0]])
    with pytest.raises(DomainError):
        transport.MetricSpace([[1.0, 1.0], [1.0, 0.0]])
    with pytest.raises(DomainError, match="triangle"):
        transport.MetricSpace([[0, 1, 5], [1, 0, 1], [5, 1, 0]])
    with pytest.raises(DomainError):
        transport.MetricSpace([[0.0, -1.0], [-1.0, 0.0]])


def test_identical_measures():
    mu = np.array([0.2, 0.3, 0.5])
    res = transport.w1_solve(mu, mu, transport.MetricSpace.line(3))
    assert res.value == 0.0
    np.testing.assert_allclose(res.plan, np.diag(mu), atol=1e-15)


def test_two_point_example():
    res = transport.w1_solve([0.7, 0.3], [0.4, 0.6], transport.MetricSpace.line(2))
    assert res.value == pytest.approx(0.3, abs=1e-15)


def test_three_points_on_a_line():
    m = transport.MetricSpace.line(3)
    mu, nu = np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])
    res = transport.w1_solve(mu, nu, m)
    assert res.value == 2.0
    np.testing.assert_allclose(res.potential, [0.0, -1.0, -2.0], atol=1e-15)
    _check_solution(res, mu, nu, m)


def test_accepts_a_raw_distance_table_and_checks_sizes():
    assert transport.w1_value([1.0, 0.0], [0.0, 1.0], [[0.0, 2.0], [2.0, 0.0]]) == 2.0
    with pytest.raises(DomainError):
        transport.w1_solve([1.0, 0.0], [0.0, 1.0], transport.MetricSpace.line(3))


@pytest.mark.parametrize("seed", range(30))
def test_matches_vertex_enumeration(seed):
    n = 2 + seed % 3
    mu, nu, m = _instance(seed, n)
    if seed % 5 == 0:
        # degenerate: shared support and a zero mass
        mu[0], nu[0] = 0.0, 0.0
        mu, nu = mu / mu.sum(), nu / nu.sum()
    res = transport.w1_solve(mu, nu, m)
    oracle, _ = transport_lp_oracle(mu, nu, m.d)
    assert abs(res.value - oracle) <= 1e-10
    _check_solution(res, mu, nu, m)


@settings(max_examples=30)
@given(seeds, st.integers(2, 6))
def test_w1_is_a_metric_on_measures(seed, n):
    rng = space.make_rng(seed)
    m = transport.MetricSpace.random(rng, n)
    a, b, c = (rng.dirichlet(np.ones(n)) for _ in range(3))
    ab, ba = transport.w1_value(a, b, m), transport.w1_value(b, a, m)
    assert abs(ab - ba) <= 1e-8
    assert ab <= transport.w1_value(a, c, m) + transport.w1_value(c, b, m) + 1e-8
    assert abs(transport.w1_value(a, a, m)) <= 1e-8


@settings(max_examples=30)
@given(seeds, st.integers(2, 8))
def test_solution_invariants_on_larger_instances(seed, n):
    mu, nu, m = _instance(seed, n)
    _check_solution(transport.w1_solve(mu, nu, m), mu, nu, m)


def test_potential_is_an_influence_function():
    rng = space.make_rng(11)
    for _ in range(5):
        n = int(rng.integers(2, 9))
        mu, nu = space.random_interior(rng, n), space.random_interior(rng, n)
        m = transport.MetricSpace.random(rng, n)
        J = transport.w1_functional(nu, m)
        assert functional.influence_residual(J, J.influence(mu), mu, rng=rng) <= 1e-4


def test_c_transform_examples():
    m = transport.MetricSpace.line(4)
    lip = np.array([0.0, 0.5, -0.5, 0.2])
    np.testing.assert_array_equal(transport.c_transform(lip, m), lip)
    rng = space.make_rng(0)
    for _ in range(50):
        m = transport.MetricSpace.random(rng, 5)
        phi = rng.normal(scale=3.0, size=5)
        once = transport.c_transform(phi, m)
        assert transport.lipschitz_constant(once, m) <= 1 + 1e-9
        np.testing.assert_allclose(transport.c_transform(once, m), once, atol=1e-15)


def test_lipschitz_constant_examples():
    m = transport.MetricSpace.line(3)
    assert transport.lipschitz_constant(np.full(3, 4.0), m) == 0.0
    assert transport.lipschitz_constant([0.0, -1.0, -2.0], m) == 1.0
    assert transport.lipschitz_constant(2.0 * m.d[0], m) == 2.0
    pseudo = transport.MetricSpace(np.zeros((2, 2)))
    assert transport.lipschitz_constant([0.0, 1.0], pseudo) == np.inf


def test_lipschitz_projection_is_the_nearest_feasible_point():
    rng = space.make_rng(3)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        m = transport.MetricSpace.random(rng, n)
        psi = rng.normal(scale=2.0, size=n)
        proj = transport.lipschitz_projection(psi, m)
        assert transport.lipschitz_constant(proj, m) <= 1 + 1e-9
        # no feasible point from a coarse grid of feasible candidates is closer
        for cand in itertools.islice(_feasible_candidates(rng, m, psi), 200):
            assert np.linalg.norm(proj - psi) <= np.linalg.norm(cand - psi) + 1e-9
        np.testing.assert_allclose(transport.lipschitz_projection(proj, m), proj, atol=1e-12)


def _feasible_candidates(rng, m, psi):
    while True:
        yield transport.c_transform(psi + rng.normal(scale=0.5, size=psi.size), m)
