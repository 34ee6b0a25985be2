"""Numerical verification suites.

Each suite turns one family of identities into measured residuals compared
against fixed thresholds.  Functions under test are looked up through their
modules at call time, so a patched (deliberately broken) implementation is
what gets checked.

Suites
------
influence          finite-difference residual of every exact influence function
chain_rule         softmax chain rule against differenced ``theta -> J(mu_theta)``
duality            dual-ascent value and maximiser against ``J`` and its influence
discriminator      tabular classifier optimum and recovered log-ratio
transport          transportation simplex against vertex enumeration
gan                GAN presets reach the target measure
vi                 BBVI / AVB reach the posterior; ELBO identity
rl                 Bellman and flow residuals; policy-gradient theorem
policy_iteration   fixed point equals value iteration; monotone objective
dual_actor_critic  saddle recovers the optimal return; V-invariance
estimators         Monte Carlo estimators agree with exact oracles
determinism        identical config and seed give identical trace files
"""

from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import divergences, engine, estimators, functional, mdp, oracles, presets, problems, space, transport

__all__ = ["CheckResult", "SUITES", "run_suite", "run_suites"]


@dataclass(frozen=True)
class CheckResult:
    """A measured quantity compared against a threshold (``measured <= threshold``)."""

    suite: str
    name: str
    measured: float
    threshold: float
    detail: str = ""

    @property
    def passed(self):
        return bool(self.measured <= self.threshold)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        text = f"[{status}] {self.suite}/{self.name}: {self.measured:.3e} <= {self.threshold:.0e}"
        return f"{text} ({self.detail})" if self.detail else text


def _sizes(rng, count, low, high):
    return rng.integers(low, high + 1, size=count)


def _rl_sizes(rng, max_cells=12):
    while True:
        S, A = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        if S * A <= max_cells and S * A >= 2:
            return S, A


# --------------------------------------------------------------------------
# 1. influence functions
# --------------------------------------------------------------------------


def suite_influence(instances=100):
    rng = space.make_rng(1)
    worst = {"js": 0.0, "ns": 0.0, "vi": 0.0, "rl": 0.0, "w1": 0.0}
    for n in _sizes(rng, instances, 2, 12):
        mu = space.random_interior(rng, n)
        nu = space.random_interior(rng, n)
        for key, J in (("js", divergences.js_functional(nu)), ("ns", divergences.ns_functional(nu))):
            worst[key] = max(worst[key], functional.influence_residual(J, J.influence(mu), mu, rng=rng))
        model = problems.random_latent_model(rng, n)
        J = divergences.vi_functional(model)
        worst["vi"] = max(worst["vi"], functional.influence_residual(J, J.influence(mu), mu, rng=rng))
        m = transport.MetricSpace.random(rng, n)
        J = transport.w1_functional(nu, m)
        worst["w1"] = max(worst["w1"], functional.influence_residual(J, J.influence(mu), mu, rng=rng))
        S, A = _rl_sizes(rng)
        inst = problems.random_mdp(rng, S, A)
        J = mdp.rl_functional(inst)
        joint = space.random_interior(rng, S * A)
        worst["rl"] = max(worst["rl"], functional.influence_residual(J, J.influence(joint), joint, rng=rng))
        # at a true occupancy the reference-free scaled advantage is the influence
        policy = space.softmax_rows(rng.normal(size=(S, A)))
        occ = mdp.discounted_occupancy(inst, policy).joint.ravel()
        psi = mdp.rl_influence(inst, policy).ravel()
        worst["rl"] = max(worst["rl"], functional.influence_residual(J, psi, occ, rng=rng))
    out = []
    for key, value in worst.items():
        tol = 1e-4 if key == "w1" else 1e-5
        out.append(CheckResult("influence", key, value, tol, f"{instances} instances"))
    return out


# --------------------------------------------------------------------------
# 2. chain rule
# --------------------------------------------------------------------------


def suite_chain_rule(pairs=50):
    rng = space.make_rng(2)
    worst = {"js": 0.0, "ns": 0.0, "vi": 0.0, "w1": 0.0, "rl": 0.0}
    for n in _sizes(rng, pairs, 2, 10):
        theta = rng.normal(size=n)
        nu = space.random_interior(rng, n)
        cases = {
            "js": divergences.js_functional(nu),
            "ns": divergences.ns_functional(nu),
            "vi": divergences.vi_functional(problems.random_latent_model(rng, n)),
            "w1": transport.w1_functional(nu, transport.MetricSpace.random(rng, n)),
        }
        for key, J in cases.items():
            mu = space.softmax(theta)
            exact = functional.chain_rule_grad(J.influence(mu), theta)
            fd = oracles.fd_gradient(lambda t, J=J: J(space.softmax(t)), theta)
            worst[key] = max(worst[key], float(np.max(np.abs(exact - fd))))
        worst["rl"] = max(worst["rl"], _policy_gradient_gap(rng, 4, 3))
    return [CheckResult("chain_rule", k, v, 1e-6, f"{pairs} pairs") for k, v in worst.items()]


def _policy_gradient_gap(rng, S, A):
    inst = problems.random_mdp(rng, S, A)
    logits = rng.normal(size=(S, A))
    policy = space.softmax_rows(logits)
    psi = mdp.rl_influence(inst, policy)
    d = mdp.discounted_occupancy(inst, policy).d
    exact = mdp.rl_chain_rule_grad(psi, logits, d)
    fd = oracles.fd_gradient(lambda t: mdp.j_rl(inst, space.softmax_rows(t)), logits)
    return float(np.max(np.abs(exact - fd)))


# --------------------------------------------------------------------------
# 3. Fenchel-Moreau duality
# --------------------------------------------------------------------------


def suite_duality(instances=20):
    rng = space.make_rng(3)
    gap = {"js": 0.0, "w1": 0.0}
    arg = {"js": 0.0, "w1": 0.0}
    slack = math.inf
    for n in _sizes(rng, instances, 2, 10):
        mu = space.random_interior(rng, n)
        nu = space.random_interior(rng, n)
        m = transport.MetricSpace.random(rng, n)
        cases = (
            ("js", estimators.JSDual(nu), divergences.js_value(mu, nu), divergences.js_influence(mu, nu), 5.0, 4000),
            ("w1", estimators.WassersteinDual(nu, m), *_w1_parts(mu, nu, m), 10.0, 500),
        )
        for key, dual, j, psi, lr, steps in cases:
            est = estimators.DualAscentEstimator(dual, learning_rate=lr, inner_steps=1, tolerance=1e-13,
                                                 warm_start=True)
            # one accepted step per fit, so weak duality is checked along the path
            for _ in range(steps):
                est.fit(mu)
                slack = min(slack, j - est.value_)
                if est.n_iter_ == 0:
                    break
            gap[key] = max(gap[key], abs(j - est.value_))
            arg[key] = max(arg[key], float(np.max(np.abs(est.influence_ - estimators.center(psi, mu)))))
    out = []
    for key in ("js", "w1"):
        out.append(CheckResult("duality", f"{key}_value", gap[key], 1e-4, "|J - dual value|"))
        out.append(CheckResult("duality", f"{key}_maximiser", arg[key], 1e-3, "centred, entrywise"))
    out.append(CheckResult("duality", "weak_duality", -slack, 1e-9, "max of dual value - J along ascent"))
    return out


def _w1_parts(mu, nu, m):
    res = transport.w1_solve(mu, nu, m)
    return res.value, res.potential


# --------------------------------------------------------------------------
# 4. optimal discriminator
# --------------------------------------------------------------------------


def suite_discriminator(instances=20):
    rng = space.make_rng(4)
    d_err = 0.0
    r_err = 0.0
    for n in _sizes(rng, instances, 2, 12):
        mu = space.random_interior(rng, n)
        nu = space.random_interior(rng, n)
        est = estimators.ClassifierRatioEstimator(learning_rate=10.0, inner_steps=20000, tolerance=1e-12)
        est.fit(mu, nu)
        d_err = max(d_err, float(np.max(np.abs(est.discriminator_ - nu / (mu + nu)))))
        target = estimators.center(divergences.ns_influence(mu, nu), mu)
        r_err = max(r_err, float(np.max(np.abs(est.log_ratio_ - target))))
    return [
        CheckResult("discriminator", "optimal_D", d_err, 1e-4, "D vs nu/(mu+nu)"),
        CheckResult("discriminator", "log_ratio", r_err, 1e-4, "vs centred reverse-KL influence"),
    ]


# --------------------------------------------------------------------------
# 5. transport
# --------------------------------------------------------------------------


def _transport_instances(rng, count):
    for k in range(count):
        n = int(rng.integers(1, 5))
        kind = k % 4
        if kind == 0:
            mu, nu = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        elif kind == 1:
            # sparse and coincident masses exercise degenerate pivots
            mu = np.zeros(n)
            mu[rng.integers(n)] = 1.0
            nu = rng.dirichlet(np.ones(n)) if n > 1 else np.ones(1)
        elif kind == 2:
            mu = rng.integers(0, 3, size=n).astype(float) + (np.arange(n) == 0)
            mu /= mu.sum()
            nu = mu[::-1].copy()
        else:
            mu = rng.dirichlet(np.ones(n))
            nu = mu.copy()
        m = transport.MetricSpace.line(n) if k % 3 == 0 else transport.MetricSpace.random(rng, n)
        yield mu, nu, m


def suite_transport(count=400):
    rng = space.make_rng(5)
    val_err = 0.0
    dual_gap = 0.0
    lip = 0.0
    for mu, nu, m in _transport_instances(rng, count):
        res = transport.w1_solve(mu, nu, m)
        oracle, _ = oracles.transport_lp_oracle(mu, nu, m.d)
        val_err = max(val_err, abs(res.value - oracle))
        dual_gap = max(dual_gap, abs(res.value - math.fsum(res.potential * (mu - nu))))
        lip = max(lip, transport.lipschitz_constant(res.potential, m) - 1.0)
    return [
        CheckResult("transport", "value_vs_lp_oracle", val_err, 1e-10, f"{count} instances, n <= 4"),
        CheckResult("transport", "duality_gap", dual_gap, 1e-8),
        CheckResult("transport", "potential_lipschitz", lip, 1e-9, "Lipschitz constant - 1"),
    ]


# --------------------------------------------------------------------------
# 6-7. GAN and VI presets
# --------------------------------------------------------------------------


def suite_gan(targets=3):
    rng = space.make_rng(6)
    out = []
    for name in presets.GAN_PRESETS:
        worst = 0.0
        for _ in range(targets):
            nu = problems.random_target(rng, 8)
            ctx = (None, nu, transport.MetricSpace.random(rng, 8)) if name == "wasserstein_gan" else (None, nu)
            res = presets.run_preset(name, ctx)
            if len(res.trace) - 1 > 5000:
                raise AssertionError("preset exceeds the step budget")
            worst = max(worst, space.tv_distance(res.measure, nu))
        out.append(CheckResult("gan", name, worst, 1e-3, f"final TV, {targets} targets, n=8"))
    return out


def suite_vi(models=5):
    rng = space.make_rng(7)
    worst = {"bbvi": 0.0, "avb": 0.0, "elbo_identity": 0.0}
    for n in _sizes(rng, models, 2, 10):
        model = problems.random_latent_model(rng, n)
        # posterior by direct summation, independent of the model properties
        joint = [p * l for p, l in zip(model.prior.tolist(), model.likelihood.tolist())]
        evidence = math.fsum(joint)
        posterior = np.array([j / evidence for j in joint])
        for name in ("bbvi", "avb"):
            res = presets.run_preset(name, model)
            worst[name] = max(worst[name], space.tv_distance(res.measure, posterior))
        for _ in range(20):
            q = space.random_interior(rng, n)
            kl = math.fsum(qi * math.log(qi / pi) for qi, pi in zip(q.tolist(), posterior.tolist()))
            elbo = math.fsum(qi * math.log(j / qi) for qi, j in zip(q.tolist(), joint))
            worst["elbo_identity"] = max(
                worst["elbo_identity"],
                abs(divergences.vi_value(q, model) - kl),
                abs(divergences.vi_value(q, model) - (math.log(evidence) - elbo)),
            )
    return [
        CheckResult("vi", "bbvi", worst["bbvi"], 1e-3, "final TV to posterior"),
        CheckResult("vi", "avb", worst["avb"], 1e-3, "final TV to posterior"),
        CheckResult("vi", "elbo_identity", worst["elbo_identity"], 1e-12, "J_VI vs log p(x) - ELBO"),
    ]


# --------------------------------------------------------------------------
# 8-10. reinforcement learning
# --------------------------------------------------------------------------


def suite_rl(instances=30):
    rng = space.make_rng(8)
    bellman = flow = series = 0.0
    pg = 0.0
    for _ in range(instances):
        S, A = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        inst = problems.random_mdp(rng, S, A)
        policy = space.softmax_rows(rng.normal(size=(S, A)))
        V, _ = mdp.policy_eval(inst, policy)
        P_pi = inst.transition_under(policy)
        R_pi = np.sum(policy * inst.R, axis=1)
        bellman = max(bellman, float(np.max(np.abs(V - (R_pi + inst.gamma * P_pi @ V)))))
        occ = mdp.discounted_occupancy(inst, policy)
        inflow = (1 - inst.gamma) * inst.p0 + inst.gamma * np.einsum("sa,sat->t", occ.joint, inst.P)
        flow = max(flow, float(np.max(np.abs(occ.d - inflow))))
        T = 400
        series = max(series, float(np.max(np.abs(occ.d - oracles.occupancy_series(inst, policy, T))))
                     - inst.gamma**T)
        pg = max(pg, _policy_gradient_gap(rng, 4, 3))
    return [
        CheckResult("rl", "bellman_residual", bellman, 1e-10),
        CheckResult("rl", "flow_residual", flow, 1e-10),
        CheckResult("rl", "occupancy_vs_series", max(series, 0.0), 1e-12, "beyond the gamma^T tail"),
        CheckResult("rl", "policy_gradient_theorem", pg, 1e-6, "random 4x3 MDPs"),
    ]


def suite_policy_iteration(instances=20):
    rng = space.make_rng(9)
    mismatches = 0
    rises = 0.0
    overlong = 0
    for _ in range(instances):
        S, A = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        inst = problems.random_mdp(rng, S, A)
        res = presets.run_preset("policy_iteration", inst)
        _, _, best = oracles.value_iteration(inst)
        mismatches += not np.array_equal(res.measure, best)
        j = [r.j_value for r in res.trace]
        rises = max(rises, max(b - a for a, b in zip(j, j[1:])) if len(j) > 1 else 0.0)
        # the loop stops changing once the fixed point is reached
        changes = sum(1 for a, b in zip(j, j[1:]) if a != b)
        overlong += changes > S * A
    return [
        CheckResult("policy_iteration", "matches_value_iteration", mismatches, 0, f"{instances} MDPs"),
        CheckResult("policy_iteration", "monotone_objective", rises, 1e-12, "max increase of J_RL"),
        CheckResult("policy_iteration", "at_most_SA_steps", overlong, 0),
    ]


def suite_dual_actor_critic(instances=20):
    rng = space.make_rng(10)
    worst = 0.0
    spread = 0.0
    for _ in range(instances):
        inst = problems.random_mdp(rng, 3, 2)
        policy, _, _ = presets.run_dual_actor_critic(inst)
        best, _, _ = mdp.policy_iteration(inst)
        worst = max(worst, mdp.j_rl(inst, policy) - mdp.j_rl(inst, best))
        feasible = mdp.discounted_occupancy(inst, space.softmax_rows(rng.normal(size=(3, 2)))).joint
        values = [mdp.dac_objective(inst, feasible, rng.normal(size=3) * 10) for _ in range(10)]
        spread = max(spread, max(values) - min(values))
    return [
        CheckResult("dual_actor_critic", "return_gap", worst, 1e-2, f"{instances} random 3x2 MDPs"),
        CheckResult("dual_actor_critic", "v_invariance", spread, 1e-10, "10 random V per MDP"),
    ]


# --------------------------------------------------------------------------
# 11. estimator unbiasedness
# --------------------------------------------------------------------------


def _z(mean, stderr, exact, slack=0.0):
    err = np.maximum(np.abs(mean - exact) - slack, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(stderr > 0, err / stderr, np.where(err > 0, np.inf, 0.0))
    return float(np.max(z))


def suite_estimators(seed=12):
    rng = space.make_rng(seed)
    zs = {"score_function": 0.0, "mc_q": 0.0, "policy_gradient": 0.0, "actor_critic": 0.0}
    for n in (3, 5, 8):
        theta = rng.normal(size=n)
        psi = rng.normal(size=n)
        mean, se = functional.score_function_grad(psi, theta, rng, 100_000, return_stderr=True)
        zs["score_function"] = max(zs["score_function"], _z(mean, se, functional.chain_rule_grad(psi, theta)))
    tol = 1e-6
    for S, A in ((1, 2), (3, 2), (4, 3)):
        inst = problems.random_mdp(rng, S, A)
        logits = rng.normal(size=(S, A))
        policy = space.softmax_rows(logits)
        _, Q = mdp.policy_eval(inst, policy)
        mc = estimators.MonteCarloQ(samples=10_000, tolerance=tol).fit(inst, policy, rng)
        zs["mc_q"] = max(zs["mc_q"], _z(mc.q_, mc.stderr_, Q, slack=tol))
        scale = 1.0 / (1.0 - inst.gamma)
        d = mdp.discounted_occupancy(inst, policy).d
        exact = mdp.rl_chain_rule_grad(mdp.rl_influence(inst, policy), logits, d)
        # actor-critic: each rollout batch gives -(Q_hat - V_hat) / (1 - gamma)
        psi_draws = -(mc.returns_ - np.sum(policy * mc.returns_, axis=2, keepdims=True)) * scale
        draws = np.stack([mdp.rl_chain_rule_grad(p, logits, d) for p in psi_draws])
        zs["actor_critic"] = max(zs["actor_critic"], _z(
            draws.mean(0), draws.std(0, ddof=1) / math.sqrt(len(draws)), exact, slack=tol * scale))
        # policy gradient: -Q_hat / (1 - gamma) with one score-function draw each
        draws = np.stack([
            mdp.rl_score_function_grad(-q * scale, logits, d, rng, 1) for q in mc.returns_
        ])
        zs["policy_gradient"] = max(zs["policy_gradient"], _z(
            draws.mean(0), draws.std(0, ddof=1) / math.sqrt(len(draws)), exact, slack=tol * scale))
    return [CheckResult("estimators", k, v, 3.0, "max |z| per coordinate") for k, v in zs.items()]


# --------------------------------------------------------------------------
# 12. determinism
# --------------------------------------------------------------------------

_DETERMINISM_CONFIGS = {
    "gan": "[problem]\nkind = gan\nn = 6\nseed = 3\n\n[algorithm]\npreset = minimax_gan\n\n"
           "[run]\nouter_steps = 60\nseed = 5\n",
    "rl": "[problem]\nkind = rl\nstates = 3\nactions = 2\nseed = 4\n\n[algorithm]\npreset = policy_gradient\n\n"
          "[run]\nouter_steps = 15\nsamples = 20\nseed = 11\n",
}


def suite_determinism():
    from .cli import main

    out = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for key, text in _DETERMINISM_CONFIGS.items():
            cfg = tmp / f"{key}.ini"
            cfg.write_text(text)
            blobs = []
            for rep in range(2):
                target = tmp / f"{key}_{rep}"
                code = main(["run", "--config", str(cfg), "--out", str(target)], stdout=None)
                if code != 0:
                    raise RuntimeError(f"determinism run failed with exit code {code}")
                blobs.append((target / "trace.csv").read_bytes())
            out.append(CheckResult("determinism", key, float(blobs[0] != blobs[1]), 0,
                                   "trace.csv differs" if blobs[0] != blobs[1] else "byte-identical"))
    return out


SUITES = {
    "influence": suite_influence,
    "chain_rule": suite_chain_rule,
    "duality": suite_duality,
    "discriminator": suite_discriminator,
    "transport": suite_transport,
    "gan": suite_gan,
    "vi": suite_vi,
    "rl": suite_rl,
    "policy_iteration": suite_policy_iteration,
    "dual_actor_critic": suite_dual_actor_critic,
    "estimators": suite_estimators,
    "determinism": suite_determinism,
}


def run_suite(name):
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name]()


def run_suites(names=None):
    names = list(SUITES) if names is None else names
    results = []
    for name in names:
        results.extend(run_suite(name))
    return results
