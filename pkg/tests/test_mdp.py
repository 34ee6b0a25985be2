import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfd import functional, mdp, problems, space
from pfd._validation import DomainError
from pfd.oracles import fd_gradient, iterative_policy_eval, occupancy_series, value_iteration

seeds = st.integers(0, 2**32 - 1)


@pytest.fixture
def single():
    """One state, two actions, R = (1, 0), gamma = 0.9."""
    return mdp.TabularMdp(p0=[1.0], P=np.ones((1, 2, 1)), R=[[1.0, 0.0]], gamma=0.9)


def _random(seed, S=None, A=None):
    rng = space.make_rng(seed)
    S = S or int(rng.integers(1, 7))
    A = A or int(rng.integers(1, 5))
    inst = problems.random_mdp(rng, S, A)
    return inst, space.softmax_rows(rng.normal(size=(S, A))), rng


def test_validation():
    with pytest.raises(DomainError, match="gamma"):
        mdp.TabularMdp([1.0], np.ones((1, 1, 1)), [[0.0]], 1.0)
    with pytest.raises(DomainError):
        mdp.TabularMdp([1.0], np.full((1, 1, 1), 0.5), [[0.0]], 0.5)
    with pytest.raises(DomainError):
        mdp.TabularMdp([1.0], np.ones((1, 2, 1)), [[0.0]], 0.5)
    with pytest.raises(DomainError):
        mdp.TabularMdp([1.0], np.ones((1, 1, 1)), [[math.inf]], 0.5)


def test_instances_are_read_only(single):
    with pytest.raises(ValueError):
        single.R[0, 0] = 3.0


def test_single_state_example(single):
    uniform = mdp.uniform_policy(1, 2)
    V, Q = mdp.policy_eval(single, uniform)
    np.testing.assert_allclose(V, [5.0], atol=1e-14)
    np.testing.assert_allclose(Q, [[5.5, 4.5]], atol=1e-14)
    assert mdp.j_rl(single, uniform) == pytest.approx(-5.0, abs=1e-14)
    assert mdp.j_rl(single, [[1.0, 0.0]]) == pytest.approx(-10.0, abs=1e-14)
    np.testing.assert_allclose(mdp.rl_influence(single, uniform), [[-5.0, 5.0]], atol=1e-13)
    np.testing.assert_array_equal(mdp.greedy_policy(Q), [[1.0, 0.0]])
    np.testing.assert_array_equal(mdp.discounted_occupancy(single, uniform).d, [1.0])


@settings(max_examples=30)
@given(seeds)
def test_bellman_and_flow_residuals(seed):
    inst, policy, _ = _random(seed)
    V, Q = mdp.policy_eval(inst, policy)
    P_pi = inst.transition_under(policy)
    R_pi = np.sum(policy * inst.R, axis=1)
    assert np.max(np.abs(V - (R_pi + inst.gamma * P_pi @ V))) <= 1e-10
    occ = mdp.discounted_occupancy(inst, policy)
    assert abs(occ.d.sum() - 1.0) <= 1e-12
    flow = (1 - inst.gamma) * inst.p0 + inst.gamma * np.einsum("sa,sat->t", occ.joint, inst.P)
    assert np.max(np.abs(occ.d - flow)) <= 1e-10
    np.testing.assert_allclose(occ.joint.sum(axis=1), occ.d, atol=1e-15)


def test_policy_eval_matches_iteration():
    inst, policy, _ = _random(7, 5, 3)
    V, _ = mdp.policy_eval(inst, policy)
    np.testing.assert_allclose(V, iterative_policy_eval(inst, policy), atol=1e-8)


def test_occupancy_matches_the_series():
    inst, policy, _ = _random(8, 5, 3)
    T = 400
    d = mdp.discounted_occupancy(inst, policy).d
    assert np.max(np.abs(d - occupancy_series(inst, policy, T))) <= inst.gamma**T + 1e-12


def test_j_rl_matches_rollouts():
    inst, policy, rng = _random(9, 3, 2)
    T, n = 200, 20_000

    def draw(cdf):
        return np.minimum((rng.random(n)[:, None] >= cdf).sum(axis=1), cdf.shape[1] - 1)

    s = draw(np.broadcast_to(np.cumsum(inst.p0), (n, inst.S)))
    returns, disc = np.zeros(n), 1.0
    for _ in range(T):
        a = draw(np.cumsum(policy, axis=1)[s])
        returns += disc * inst.R[s, a]
        disc *= inst.gamma
        s = draw(np.cumsum(inst.P, axis=2)[s, a])
    se = returns.std(ddof=1) / math.sqrt(n)
    bound = inst.gamma**T * np.max(np.abs(inst.R)) / (1 - inst.gamma)
    assert abs(-returns.mean() - mdp.j_rl(inst, policy)) <= 3 * se + bound


@settings(max_examples=30)
@given(seeds)
def test_influence_has_zero_conditional_mean(seed):
    inst, policy, _ = _random(seed)
    psi = mdp.rl_influence(inst, policy)
    assert np.max(np.abs(np.sum(policy * psi, axis=1))) <= 1e-12


def test_influence_reference_choices():
    inst, policy, _ = _random(10, 3, 2)
    d = mdp.discounted_occupancy(inst, policy).d
    np.testing.assert_allclose(mdp.rl_influence(inst, policy, reference=d),
                               mdp.rl_influence(inst, policy), atol=1e-12)
    uni = mdp.rl_influence(inst, policy, reference="uniform")
    adv = mdp.rl_influence(inst, policy) * (1 - inst.gamma)
    np.testing.assert_allclose(uni, d[:, None] * 3 / (1 - inst.gamma) * adv, atol=1e-12)
    with pytest.raises(DomainError):
        mdp.rl_influence(inst, policy, reference="nearest")
    with pytest.raises(DomainError, match="reachable"):
        mdp.rl_influence(inst, policy, reference=[1.0, 0.0, 0.0])


@pytest.mark.parametrize("seed", range(5))
def test_policy_gradient_theorem(seed):
    inst, _, rng = _random(20 + seed, 4, 3)
    logits = rng.normal(size=(4, 3))
    policy = space.softmax_rows(logits)
    d = mdp.discounted_occupancy(inst, policy).d
    g = mdp.rl_chain_rule_grad(mdp.rl_influence(inst, policy), logits, d)
    fd = fd_gradient(lambda t: mdp.j_rl(inst, space.softmax_rows(t)), logits)
    assert np.max(np.abs(g - fd)) <= 1e-6


def test_score_function_policy_gradient_is_unbiased():
    inst, _, rng = _random(30, 3, 2)
    logits = rng.normal(size=(3, 2))
    policy = space.softmax_rows(logits)
    d = mdp.discounted_occupancy(inst, policy).d
    psi = mdp.rl_influence(inst, policy)
    mean, se = mdp.rl_score_function_grad(psi, logits, d, rng, 100_000, return_stderr=True)
    exact = mdp.rl_chain_rule_grad(psi, logits, d)
    assert np.all(np.abs(mean - exact) <= 3 * se + 1e-15)


def test_rl_functional_on_joint_measures():
    inst, policy, rng = _random(31, 3, 2)
    J = mdp.rl_functional(inst)
    occ = mdp.discounted_occupancy(inst, policy).joint.ravel()
    assert J(occ) == pytest.approx(mdp.j_rl(inst, policy), abs=1e-14)
    joint = space.random_interior(rng, 6)
    assert functional.influence_residual(J, J.influence(joint), joint, rng=rng) <= 1e-5
    with pytest.raises(DomainError):
        J(np.full(4, 0.25))


def test_conditional_from_joint():
    marginal, policy = mdp.conditional_from_joint([[0.2, 0.2], [0.0, 0.0], [0.45, 0.15]])
    np.testing.assert_allclose(marginal, [0.4, 0.0, 0.6])
    np.testing.assert_allclose(policy, [[0.5, 0.5], [0.5, 0.5], [0.75, 0.25]])


def test_greedy_ties_and_validation():
    np.testing.assert_array_equal(mdp.greedy_policy([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]]),
                                  [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    with pytest.raises(DomainError):
        mdp.greedy_policy([[math.nan, 0.0]])


@pytest.mark.parametrize("seed", range(10))
def test_greedy_on_optimal_values_matches_value_iteration(seed):
    inst, _, _ = _random(40 + seed)
    V_star, Q_star, pi_star = value_iteration(inst)
    np.testing.assert_array_equal(mdp.greedy_policy(Q_star), pi_star)
    assert np.max(np.abs(mdp.bellman_apply(inst, V_star).max(axis=1))) <= 1e-10


def test_bellman_apply_examples():
    inst, policy, _ = _random(50, 4, 3)
    np.testing.assert_array_equal(mdp.bellman_apply(inst, np.zeros(4)), inst.R)
    V, _ = mdp.policy_eval(inst, policy)
    assert np.max(np.abs(np.sum(policy * mdp.bellman_apply(inst, V), axis=1))) <= 1e-12
    with pytest.raises(DomainError):
        mdp.bellman_apply(inst, np.zeros(3))


@settings(max_examples=20)
@given(seeds)
def test_dac_objective_is_v_invariant_on_occupancies(seed):
    inst, policy, rng = _random(seed)
    joint = mdp.discounted_occupancy(inst, policy).joint
    values = [mdp.dac_objective(inst, joint, rng.normal(scale=5.0, size=inst.S)) for _ in range(10)]
    assert max(values) - min(values) <= 1e-10
    assert values[0] == pytest.approx((inst.gamma - 1) * mdp.j_rl(inst, policy), abs=1e-10)


def test_dac_objective_examples():
    inst, policy, rng = _random(60, 3, 2)
    joint = space.random_interior(rng, 6).reshape(3, 2)
    assert mdp.dac_objective(inst, joint, np.zeros(3)) == pytest.approx(np.sum(joint * inst.R), abs=1e-15)
    # a point mass on a state the chain leaves breaks the flow equation
    bad = np.zeros((3, 2))
    bad[0, 0] = 1.0
    flow = (1 - inst.gamma) * inst.p0 + inst.gamma * np.einsum("sa,sat->t", bad, inst.P) - bad.sum(1)
    assert np.max(np.abs(flow)) > 1e-3
    v1, v2 = np.zeros(3), flow
    assert abs(mdp.dac_objective(inst, bad, v1) - mdp.dac_objective(inst, bad, v2)) > 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_policy_improvement_never_increases_j(seed):
    inst, policy, _ = _random(70 + seed)
    _, Q = mdp.policy_eval(inst, policy)
    assert mdp.j_rl(inst, mdp.greedy_policy(Q)) <= mdp.j_rl(inst, policy) + 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_policy_iteration_fixed_point(seed):
    inst, _, _ = _random(80 + seed)
    policy, V, history = mdp.policy_iteration(inst)
    _, _, pi_star = value_iteration(inst)
    np.testing.assert_array_equal(policy, pi_star)
    values = [mdp.j_rl(inst, p) for p in history]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    assert len(history) - 1 <= inst.S * inst.A


def test_text_format_round_trip(tmp_path):
    inst, _, _ = _random(90, 3, 2)
    path = tmp_path / "m.txt"
    mdp.save_mdp(inst, path)
    back = mdp.load_mdp(path)
    for name in ("p0", "P", "R"):
        np.testing.assert_array_equal(getattr(back, name), getattr(inst, name))
    assert back.gamma == inst.gamma
    assert path.read_text().splitlines()[0] == f"3 2 {inst.gamma!r}"


def test_text_format_accepts_comments_and_any_row_order():
    text = """# a two-state chain
    2 1 0.5
    1 0
    1 0 2.0 0 1
    0 0 1.0 0 1   # state 0 moves to state 1
    """
    inst = mdp.parse_mdp(text)
    np.testing.assert_array_equal(inst.R, [[1.0], [2.0]])


@pytest.mark.parametrize("text, where", [
    ("2 1\n", ":1:"),
    ("1 1 0.5\n1 0\n0 0 1 1\n", ":2:"),
    ("1 1 0.5\n1\n0 0 1\n", ":3:"),
    ("1 1 0.5\n1\n0 0 x 1\n", ":3:"),
    ("1 1 0.5\n1\n3 0 1 1\n", ":3:"),
    ("2 1 0.5\n1 0\n0 0 1 1 0\n0 0 1 1 0\n", ":4:"),
    ("1 1 1.5\n1\n0 0 1 1\n", "gamma"),
])
def test_text_format_errors_name_the_line(text, where):
    with pytest.raises(DomainError, match=where):
        mdp.parse_mdp(text, source="m.txt")
