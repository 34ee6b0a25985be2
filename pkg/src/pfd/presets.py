"""The nine classical algorithms as configurations of one descent loop.

============================  ==========  ==========================  ===========
preset                        functional  differentiation step        descent
============================  ==========  ==========================  ===========
``minimax_gan``               JS          convex-dual ascent          gradient
``nonsaturating_gan``         reverse KL  logistic classifier         gradient
``wasserstein_gan``           W1          Lipschitz dual ascent       gradient
``bbvi``                      KL(q||p)    exact                       gradient
``avb``                       KL(q||p)    classifier of q vs prior    gradient
``policy_iteration``          RL          exact advantage             global min
``policy_gradient``           RL          Monte Carlo Q               score function
``actor_critic``              RL          MC Q minus fitted V         gradient
``dual_actor_critic``         RL          Lagrangian saddle point     descent-ascent
============================  ==========  ==========================  ===========

Step sizes and budgets below are engineering defaults.  For the KL-type
objectives the logit-space Hessian is a covariance with eigenvalues at most
1/2, so plain gradient steps need ``lr < 4``; JS has a quarter of that
curvature.  All of them can be overridden through ``build_preset(..., **overrides)``.
"""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigError, NumericalError, check_prob_vector
from .divergences import LatentModel
from .engine import PfdConfig, TraceRecord, pfd_run
from .estimators import EstimatorConfig
from .mdp import (
    TabularMdp,
    bellman_apply,
    conditional_from_joint,
    dac_objective,
    j_rl,
)
from .space import make_rng, softmax
from .transport import MetricSpace

__all__ = [
    "PRESETS",
    "build_preset",
    "run_preset",
    "run_dual_actor_critic",
    "dual_actor_critic_loop",
    "ProbabilityFunctionalDescent",
]

GAN_PRESETS = ("minimax_gan", "nonsaturating_gan", "wasserstein_gan")
VI_PRESETS = ("bbvi", "avb")
RL_PRESETS = ("policy_iteration", "policy_gradient", "actor_critic", "dual_actor_critic")
PRESETS = GAN_PRESETS + VI_PRESETS + RL_PRESETS

DESCRIPTIONS = {
    "minimax_gan": "Jensen-Shannon GAN, critic by convex-dual ascent",
    "nonsaturating_gan": "reverse-KL GAN, critic by logistic classification",
    "wasserstein_gan": "Wasserstein-1 GAN, critic by projected Lipschitz dual ascent",
    "bbvi": "black-box variational inference with the exact influence",
    "avb": "adversarial variational Bayes, q-vs-prior classifier",
    "policy_iteration": "exact advantages, greedy (global) improvement",
    "policy_gradient": "Monte Carlo Q with the score-function gradient",
    "actor_critic": "Monte Carlo Q minus least-squares V advantage",
    "dual_actor_critic": "descent-ascent on the Bellman-flow Lagrangian",
}


def _gan_context(name, context):
    if isinstance(context, (tuple, list)) and len(context) in (2, 3):
        ctx = {"init": context[0], "nu": context[1]}
        if len(context) == 3:
            ctx["metric"] = context[2]
    elif isinstance(context, dict) and "nu" in context:
        ctx = dict(context)
    else:
        raise ConfigError(f"{name} needs (mu0, nu) or a dict with 'nu'")
    nu = check_prob_vector(ctx["nu"], "nu")
    ctx["nu"] = nu
    if ctx.get("init") is not None:
        init = check_prob_vector(ctx["init"], "mu0")
        if init.size != nu.size:
            raise ConfigError("mu0 and nu differ in size")
        ctx["init"] = init
    if name == "wasserstein_gan":
        metric = ctx.get("metric")
        if metric is None:
            metric = MetricSpace.line(nu.size)
        elif not isinstance(metric, MetricSpace):
            metric = MetricSpace(metric)
        if metric.n != nu.size:
            raise ConfigError("metric and nu differ in size")
        ctx["metric"] = metric
    return ctx


def build_preset(name, context, **overrides):
    """Wire a named algorithm to a problem.

    Parameters
    ----------
    name : str
        One of :data:`PRESETS`.
    context
        ``(mu0, nu)``, ``(mu0, nu, metric)`` or a dict with ``nu`` for the GAN
        presets (``mu0`` may be ``None`` for uniform); a
        :class:`~pfd.divergences.LatentModel` for ``bbvi``/``avb``; a
        :class:`~pfd.mdp.TabularMdp` for the RL presets.
    **overrides
        Any :class:`~pfd.engine.PfdConfig` field.  ``inner_steps``,
        ``inner_learning_rate``, ``samples`` and ``tolerance`` adjust the
        estimator.

    Raises
    ------
    ConfigError
        Unknown name, or a context of the wrong family.
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}")
    est_keys = {"inner_steps": "inner_steps", "inner_learning_rate": "learning_rate",
                "samples": "samples", "tolerance": "tolerance"}
    est_over = {est_keys[k]: overrides.pop(k) for k in list(overrides) if k in est_keys}

    if name in GAN_PRESETS:
        ctx = _gan_context(name, context)
        init = ctx.pop("init", None)
        if name == "minimax_gan":
            fields = dict(functional="js", learning_rate=8.0, outer_steps=1000,
                          estimator=dict(kind="dual_ascent", inner_steps=10, learning_rate=5.0))
        elif name == "nonsaturating_gan":
            fields = dict(functional="ns", learning_rate=2.0, outer_steps=1000,
                          estimator=dict(kind="classifier", inner_steps=10, learning_rate=5.0))
        else:
            # the chain-rule step scales with the potential, i.e. the diameter;
            # the subgradient chatters at a size proportional to the step, so
            # the step decays geometrically
            diam = float(ctx["metric"].d.max()) or 1.0
            fields = dict(functional="w1", learning_rate=2.0 / diam, lr_decay=0.002, outer_steps=5000,
                          estimator=dict(kind="dual_ascent", inner_steps=3, learning_rate=10.0))
        fields.update(context=ctx, init=init, target=ctx["nu"])
    elif name in VI_PRESETS:
        if not isinstance(context, LatentModel):
            raise ConfigError(f"{name} needs a LatentModel")
        fields = dict(functional="vi", context={"model": context}, learning_rate=2.0,
                      outer_steps=1000, target=context.posterior)
        if name == "bbvi":
            fields["estimator"] = dict(kind="exact")
        else:
            fields["estimator"] = dict(kind="classifier", inner_steps=10, learning_rate=5.0)
    else:
        if not isinstance(context, TabularMdp):
            raise ConfigError(f"{name} needs a TabularMdp")
        fields = dict(functional="rl", context={"mdp": context})
        if name == "policy_iteration":
            fields.update(estimator=dict(kind="exact"), descent="global_min",
                          outer_steps=context.S * context.A)
        elif name == "policy_gradient":
            fields.update(estimator=dict(kind="mc_q", samples=100, tolerance=1e-6),
                          grad_kind="score_function", learning_rate=1.0, outer_steps=200)
        elif name == "actor_critic":
            fields.update(estimator=dict(kind="lsq_v", samples=100, tolerance=1e-6),
                          learning_rate=1.0, outer_steps=200)
        else:
            fields.update(estimator=dict(kind="exact"), descent="saddle", learning_rate=1.0,
                          critic_learning_rate=1.0, outer_steps=3000)
    fields["estimator"] = EstimatorConfig(**{**fields["estimator"], **est_over})
    unknown = set(overrides) - {f.name for f in dataclasses.fields(PfdConfig)}
    if unknown:
        raise ConfigError(f"unknown override(s) {sorted(unknown)}")
    if "context" in overrides or "functional" in overrides:
        raise ConfigError("a preset fixes its functional and context")
    fields.update(overrides)
    return PfdConfig(**fields)


def run_preset(name, context, **overrides):
    return pfd_run(build_preset(name, context, **overrides))


# --------------------------------------------------------------------------
# dual actor-critic
# --------------------------------------------------------------------------


def _dac_gradients(mdp, theta, V):
    """Ascent direction in the joint logits and descent direction in ``V``."""
    p = softmax(theta)
    joint = p.reshape(mdp.S, mdp.A)
    AV = bellman_apply(mdp, V).ravel()
    g_theta = p * (AV - p @ AV)
    # d/dV of (1 - gamma) p0.V + sum joint * AV is the Bellman-flow residual
    g_V = (1.0 - mdp.gamma) * mdp.p0 + mdp.gamma * np.einsum("sa,sat->t", joint, mdp.P) - joint.sum(axis=1)
    return g_theta, g_V


def dual_actor_critic_loop(mdp, cfg):
    """Descent-ascent on ``L(joint, V) = (1 - gamma) E_p0[V] + E_joint[A V]``.

    ``joint = softmax(theta)`` over state-action pairs is pushed up (it plays
    the occupancy measure, so the sup is the best expected reward) and ``V``
    is pushed down (it is the Lagrange multiplier of the Bellman flow
    constraint).  Returns ``(theta, policy, V, trace)``; the trace reports
    ``J_RL`` of the recovered policy ``joint(s, a) / sum_a joint(s, a)``.
    """
    theta = np.zeros(mdp.S * mdp.A)
    if cfg.init is not None:
        init = check_prob_vector(np.asarray(cfg.init, dtype=np.float64).ravel(), "init")
        with np.errstate(divide="ignore"):
            theta = np.log(init)
    V = np.zeros(mdp.S)
    lr, clr = cfg.learning_rate, cfg.critic_learning_rate
    prev = None
    trace = []

    def record(k, g_norm, start):
        policy = conditional_from_joint(softmax(theta).reshape(mdp.S, mdp.A))[1]
        j = j_rl(mdp, policy)
        value = dac_objective(mdp, softmax(theta).reshape(mdp.S, mdp.A), V)
        if not (math.isfinite(j) and math.isfinite(value)):
            raise NumericalError(f"step {k}: saddle objective is not finite", trace=trace, step=k)
        tv = None
        if cfg.target is not None:
            tv = float(0.5 * np.abs(policy - mdp.check_policy(cfg.target)).sum(axis=1).max())
        wall = (time.perf_counter() - start) * 1e3 if cfg.timing else None
        trace.append(TraceRecord(k, j, g_norm, None, tv, wall))
        return policy

    for k in range(cfg.outer_steps + 1):
        start = time.perf_counter()
        if k == cfg.outer_steps:
            policy = record(k, None, start)
            break
        g_theta, g_V = _dac_gradients(mdp, theta, V)
        g_norm = float(math.hypot(np.linalg.norm(g_theta), np.linalg.norm(g_V)))
        record(k, g_norm, start)
        if cfg.saddle_method == "extragradient":
            h_theta, h_V = _dac_gradients(mdp, theta + lr * g_theta, V - clr * g_V)
            theta, V = theta + lr * h_theta, V - clr * h_V
        elif cfg.saddle_method == "optimistic":
            last = (g_theta, g_V) if prev is None else prev
            theta = theta + lr * (2.0 * g_theta - last[0])
            V = V - clr * (2.0 * g_V - last[1])
            prev = (g_theta, g_V)
        else:
            theta, V = theta + lr * g_theta, V - clr * g_V
        if not (np.all(np.isfinite(V)) and not np.any(np.isnan(theta))):
            raise NumericalError(f"step {k}: saddle iterate is not finite", trace=trace, step=k)
    return theta, policy, V, trace


def run_dual_actor_critic(mdp, cfg=None):
    """Returns ``(policy, V, trace)``; ``cfg`` defaults to the preset."""
    if cfg is None:
        cfg = build_preset("dual_actor_critic", mdp)
    _, policy, V, trace = dual_actor_critic_loop(mdp, cfg)
    return policy, V, trace


# --------------------------------------------------------------------------
# estimator-style front end
# --------------------------------------------------------------------------


class ProbabilityFunctionalDescent(BaseEstimator):
    """Run a preset with the scikit-learn ``fit`` convention.

    Parameters
    ----------
    preset : str
    outer_steps, learning_rate, seed : optional
        Override the preset defaults when not ``None``.

    Attributes
    ----------
    config_ : PfdConfig
    measure_ : ndarray
        Final distribution, or policy table for the RL presets.
    params_ : ndarray
    trace_ : list of TraceRecord
    """

    def __init__(self, preset="nonsaturating_gan", outer_steps=None, learning_rate=None, seed=0):
        self.preset = preset
        self.outer_steps = outer_steps
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, context):
        over = {"seed": self.seed}
        if self.outer_steps is not None:
            over["outer_steps"] = self.outer_steps
        if self.learning_rate is not None:
            over["learning_rate"] = self.learning_rate
        self.config_ = build_preset(self.preset, context, **over)
        result = pfd_run(self.config_)
        self.params_, self.measure_, self.trace_ = result
        return self

    def objective_path(self):
        check_is_fitted(self, "trace_")
        return np.array([r.j_value for r in self.trace_])
