import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pfd import space
from pfd._validation import DomainError

logits = arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50))


def test_softmax_examples():
    np.testing.assert_allclose(space.softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=0, atol=1e-15)
    np.testing.assert_allclose(space.softmax([math.log(2.0), 0.0]), [2 / 3, 1 / 3], rtol=0, atol=1e-15)
    theta = np.array([0.3, -1.2, 2.0])
    # theta + 5 is itself rounded, so agreement is to the last bit or two
    np.testing.assert_allclose(space.softmax(theta), space.softmax(theta + 5.0), rtol=0, atol=1e-15)


def test_softmax_survives_overflow():
    p = space.softmax([1000.0, 0.0])
    assert np.all(np.isfinite(p))
    assert p[0] == 1.0


@given(logits)
def test_softmax_is_a_probability_vector(theta):
    p = space.softmax(theta)
    assert np.all(p > 0) or np.ptp(theta) > 700
    assert abs(p.sum() - 1.0) <= 1e-12


def test_softmax_rows():
    p = space.softmax_rows([[0.0, 0.0], [math.log(3.0), 0.0]])
    np.testing.assert_allclose(p, [[0.5, 0.5], [0.75, 0.25]], atol=1e-15)


def test_mix_examples():
    mu, nu = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    np.testing.assert_array_equal(space.mix(mu, nu, 0.0), mu)
    np.testing.assert_array_equal(space.mix(mu, nu, 1.0), nu)
    np.testing.assert_allclose(space.mix(mu, nu, 0.25), [0.75, 0.25])


@pytest.mark.parametrize("eps", [-0.1, 1.5, math.nan])
def test_mix_rejects_eps_outside_unit_interval(eps):
    with pytest.raises(DomainError):
        space.mix([0.5, 0.5], [1.0, 0.0], eps)


@settings(max_examples=50)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_mix_lies_on_the_segment(n, seed, eps):
    rng = space.make_rng(seed)
    mu, nu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    m = space.mix(mu, nu, eps)
    assert abs(space.tv_distance(m, mu) - eps * space.tv_distance(nu, mu)) <= 1e-12


def test_tv_examples():
    mu = np.array([0.7, 0.3])
    assert space.tv_distance(mu, mu) == 0.0
    assert space.tv_distance([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert space.tv_distance(mu, [0.4, 0.6]) == pytest.approx(0.3, abs=1e-15)


def test_tv_dimension_mismatch():
    with pytest.raises(DomainError):
        space.tv_distance([1.0, 0.0], [1.0, 0.0, 0.0])


def test_sample_point_mass():
    assert np.all(space.sample([1.0, 0.0], space.make_rng(0), 1000) == 0)


def test_sample_never_draws_trailing_zero_mass():
    assert np.all(space.sample([0.5, 0.5, 0.0], space.make_rng(3), 10_000) < 2)


def test_sample_is_deterministic():
    mu = [0.2, 0.5, 0.3]
    a = space.sample(mu, space.make_rng(42), 50)
    b = space.sample(mu, space.make_rng(42), 50)
    np.testing.assert_array_equal(a, b)


def test_sample_law_of_large_numbers():
    draws = space.sample([0.3, 0.7], space.make_rng(7), 100_000)
    freq = np.bincount(draws, minlength=2) / draws.size
    assert space.tv_distance(freq, [0.3, 0.7]) <= 0.01


def test_sample_count_zero_and_negative():
    assert space.sample([0.5, 0.5], 0, 0).size == 0
    with pytest.raises(DomainError):
        space.sample([0.5, 0.5], 0, -1)


def test_make_rng_is_philox():
    rng = space.make_rng(5)
    assert isinstance(rng.bit_generator, np.random.Philox)
    assert space.make_rng(rng) is rng


def test_random_interior_floor():
    mu = space.random_interior(space.make_rng(0), 6, floor=0.3)
    assert mu.min() >= 0.3 / 6 - 1e-15
    assert abs(mu.sum() - 1.0) <= 1e-12


def test_finite_space():
    s = space.FiniteSpace(3, labels=("a", "b", "c"))
    assert s.label(1) == "b"
    assert space.FiniteSpace(2).label(1) == "1"
    with pytest.raises(DomainError):
        space.FiniteSpace(0)
    with pytest.raises(DomainError):
        space.FiniteSpace(2, labels=("a",))
