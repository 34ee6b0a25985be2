import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from pfd import mdp, presets, problems, space
from pfd._validation import ConfigError
from pfd.divergences import LatentModel
from pfd.estimators import EstimatorConfig
from pfd.oracles import value_iteration
from pfd.transport import MetricSpace


@pytest.fixture
def single():
    return mdp.TabularMdp(p0=[1.0], P=np.ones((1, 2, 1)), R=[[1.0, 0.0]], gamma=0.9)


@pytest.fixture
def gan_pair():
    rng = space.make_rng(0)
    return space.uniform(8), problems.random_target(rng, 8)


def test_the_nine_presets():
    assert len(presets.PRESETS) == 9
    assert set(presets.DESCRIPTIONS) == set(presets.PRESETS)


@pytest.mark.parametrize("name, functional, kind, descent", [
    ("minimax_gan", "js", "dual_ascent", "gradient"),
    ("nonsaturating_gan", "ns", "classifier", "gradient"),
    ("wasserstein_gan", "w1", "dual_ascent", "gradient"),
])
def test_gan_wiring(gan_pair, name, functional, kind, descent):
    cfg = presets.build_preset(name, gan_pair)
    assert (cfg.functional, cfg.estimator.kind, cfg.descent) == (functional, kind, descent)
    np.testing.assert_array_equal(cfg.target, gan_pair[1])
    np.testing.assert_array_equal(cfg.init, gan_pair[0])


def test_rl_and_vi_wiring(single):
    model = LatentModel([0.5, 0.5], [0.2, 0.9])
    expected = {
        "bbvi": ("vi", "exact", "gradient", "exact_chain_rule"),
        "avb": ("vi", "classifier", "gradient", "exact_chain_rule"),
        "policy_iteration": ("rl", "exact", "global_min", "exact_chain_rule"),
        "policy_gradient": ("rl", "mc_q", "gradient", "score_function"),
        "actor_critic": ("rl", "lsq_v", "gradient", "exact_chain_rule"),
        "dual_actor_critic": ("rl", "exact", "saddle", "exact_chain_rule"),
    }
    for name, wiring in expected.items():
        cfg = presets.build_preset(name, model if name in presets.VI_PRESETS else single)
        assert (cfg.functional, cfg.estimator.kind, cfg.descent, cfg.grad_kind) == wiring


def test_gan_context_forms(gan_pair):
    mu0, nu = gan_pair
    m = MetricSpace.random(space.make_rng(1), 8)
    cfg = presets.build_preset("wasserstein_gan", (mu0, nu, m))
    assert cfg.context["metric"] is m
    assert cfg.learning_rate == pytest.approx(2.0 / m.d.max())
    cfg = presets.build_preset("wasserstein_gan", {"nu": nu})
    np.testing.assert_array_equal(cfg.context["metric"].d, MetricSpace.line(8).d)
    assert cfg.init is None


@pytest.mark.parametrize("name, context", [
    ("minimax_gan", "not a pair"),
    ("minimax_gan", (np.full(3, 1 / 3), np.full(4, 0.25))),
    ("wasserstein_gan", (None, np.full(4, 0.25), MetricSpace.line(3))),
    ("bbvi", (np.full(2, 0.5), np.full(2, 0.5))),
    ("policy_iteration", LatentModel([0.5, 0.5], [1.0, 1.0])),
    ("generative_flow", None),
])
def test_mismatched_or_unknown(name, context):
    with pytest.raises(ConfigError):
        presets.build_preset(name, context)


def test_overrides(gan_pair):
    cfg = presets.build_preset("minimax_gan", gan_pair, inner_steps=3, inner_learning_rate=0.5,
                               outer_steps=7, seed=9)
    assert cfg.estimator == EstimatorConfig("dual_ascent", inner_steps=3, learning_rate=0.5)
    assert (cfg.outer_steps, cfg.seed) == (7, 9)
    with pytest.raises(ConfigError, match="unknown override"):
        presets.build_preset("minimax_gan", gan_pair, momentum=0.9)
    with pytest.raises(ConfigError):
        presets.build_preset("minimax_gan", gan_pair, functional="ns")


def test_policy_iteration_single_state(single):
    res = presets.run_preset("policy_iteration", single, outer_steps=1)
    np.testing.assert_array_equal(res.measure, [[1.0, 0.0]])
    assert res.trace[-1].j_value == pytest.approx(-10.0, abs=1e-12)


@pytest.mark.parametrize("name", ["minimax_gan", "nonsaturating_gan"])
def test_gan_presets_reach_the_target(gan_pair, name):
    res = presets.run_preset(name, gan_pair, outer_steps=300)
    assert space.tv_distance(res.measure, gan_pair[1]) <= 1e-3


def test_bbvi_and_avb_agree():
    model = problems.random_latent_model(space.make_rng(3), 6)
    q_bbvi = presets.run_preset("bbvi", model, outer_steps=400).measure
    q_avb = presets.run_preset("avb", model, outer_steps=400).measure
    for q in (q_bbvi, q_avb):
        assert space.tv_distance(q, model.posterior) <= 1e-3
    assert space.tv_distance(q_bbvi, q_avb) <= 1e-3


def test_dual_actor_critic_single_state(single):
    cfg = presets.build_preset("dual_actor_critic", single)
    theta, policy, V, trace = presets.dual_actor_critic_loop(single, cfg)
    assert policy[0, 0] >= 0.999
    joint = space.softmax(theta.ravel()).reshape(1, 2)
    assert mdp.dac_objective(single, joint, V) == pytest.approx(1.0, abs=1e-3)
    assert len(trace) == cfg.outer_steps + 1


def test_dual_actor_critic_myopic_limit():
    rng = space.make_rng(123)
    checked = 0
    while checked < 5:
        inst = problems.random_mdp(rng, 3, 2, gamma=0.05)
        # a reward gap above gamma * max R / (1 - gamma) makes the myopic policy optimal
        if np.min(np.abs(inst.R[:, 0] - inst.R[:, 1])) < 0.1:
            continue
        checked += 1
        np.testing.assert_array_equal(value_iteration(inst)[2], np.eye(2)[np.argmax(inst.R, axis=1)])
        cfg = presets.build_preset("dual_actor_critic", inst, outer_steps=300)
        policy, _, _ = presets.run_dual_actor_critic(inst, cfg)
        np.testing.assert_array_equal(np.argmax(policy, axis=1), np.argmax(inst.R, axis=1))


@pytest.mark.parametrize("method", ["simultaneous", "optimistic", "extragradient"])
def test_saddle_methods_run_and_are_deterministic(method):
    inst = problems.random_mdp(space.make_rng(4), 3, 2)
    cfg = presets.build_preset("dual_actor_critic", inst, outer_steps=50, saddle_method=method)
    a = presets.run_dual_actor_critic(inst, cfg)
    b = presets.run_dual_actor_critic(inst, cfg)
    assert a[2] == b[2]
    np.testing.assert_array_equal(a[0], b[0])


def test_stochastic_rl_presets_improve_the_return():
    inst = problems.random_mdp(space.make_rng(6), 3, 2)
    start = mdp.j_rl(inst, mdp.uniform_policy(3, 2))
    _, V, _ = mdp.policy_iteration(inst)
    optimum = -float(np.dot(inst.p0, V))
    for name in ("policy_gradient", "actor_critic"):
        res = presets.run_preset(name, inst, outer_steps=100)
        assert res.trace[-1].j_value < start - 0.5 * (start - optimum)


def test_sklearn_front_end(gan_pair):
    est = presets.ProbabilityFunctionalDescent(preset="nonsaturating_gan", outer_steps=50)
    assert est.get_params() == {"preset": "nonsaturating_gan", "outer_steps": 50,
                                "learning_rate": None, "seed": 0}
    with pytest.raises(NotFittedError):
        est.objective_path()
    est.fit(gan_pair)
    path = est.objective_path()
    assert path.shape == (51,)
    assert path[-1] < path[0]
    assert est.config_.outer_steps == 50
    np.testing.assert_allclose(est.measure_.sum(), 1.0)
