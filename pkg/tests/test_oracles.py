import numpy as np
import pytest
from scipy.optimize import linprog

from pfd import oracles, problems, space, verify


def test_fd_gradient_of_a_quadratic():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    x = np.array([0.5, -1.0])
    np.testing.assert_allclose(oracles.fd_gradient(lambda v: 0.5 * v @ A @ v, x), A @ x, atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_vertex_enumeration_agrees_with_an_lp_solver(seed):
    rng = space.make_rng(seed)
    n = 3
    mu, nu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    d = rng.random((n, n))
    value, plan = oracles.transport_lp_oracle(mu, nu, d)
    A = np.zeros((2 * n, n * n))
    for i in range(n):
        A[i, i * n:(i + 1) * n] = 1.0
        A[n + i, i::n] = 1.0
    ref = linprog(d.ravel(), A_eq=A, b_eq=np.concatenate([mu, nu]), bounds=(0, None), method="highs")
    assert value == pytest.approx(ref.fun, abs=1e-9)
    np.testing.assert_allclose(plan.sum(axis=1), mu, atol=1e-12)


def test_value_iteration_is_a_fixed_point():
    inst = problems.random_mdp(space.make_rng(0), 4, 3)
    V, Q, policy = oracles.value_iteration(inst)
    np.testing.assert_allclose(V, Q.max(axis=1), atol=1e-12)
    np.testing.assert_allclose(Q, inst.R + inst.gamma * inst.P @ V, atol=1e-12)
    assert np.all(policy.sum(axis=1) == 1.0)


def test_random_problems_are_valid_and_reproducible():
    a = problems.random_mdp(space.make_rng(1), 3, 2, gamma=0.5)
    b = problems.random_mdp(space.make_rng(1), 3, 2, gamma=0.5)
    np.testing.assert_array_equal(a.P, b.P)
    assert a.gamma == 0.5
    nu = problems.random_target(space.make_rng(2), 8)
    assert nu.min() >= 0.2 / 8 - 1e-15
    model = problems.random_latent_model(space.make_rng(3), 5)
    assert np.all((model.likelihood >= 0.05) & (model.likelihood <= 1.0))


def test_check_result_line():
    ok = verify.CheckResult("s", "c", 1e-7, 1e-6, "detail")
    assert ok.passed
    assert ok.line() == "[PASS] s/c: 1.000e-07 <= 1e-06 (detail)"
    bad = verify.CheckResult("s", "c", 2.0, 1.0)
    assert not bad.passed
    assert bad.line().startswith("[FAIL]")
    with pytest.raises(KeyError):
        verify.run_suite("nope")
