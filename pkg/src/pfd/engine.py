"""The descent loop: alternate a differentiation step and a descent step.

Each outer step estimates a centred influence function ``psi_hat`` at the
current measure, freezes it, and decreases ``theta -> E_{mu_theta}[psi_hat]``
either by a gradient step on softmax logits or, for tabular policies, by
moving all conditional mass to ``argmin psi_hat`` (global minimisation).

Problems are described by :class:`PfdConfig`; the preset module builds the
nine standard wirings.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Optional

import numpy as np

from ._validation import (
    ConfigError,
    EstimatorDivergence,
    NumericalError,
    PFDError,
    check_prob_vector,
)
from .divergences import LatentModel, js_functional, ns_functional, vi_functional
from .estimators import (
    ClassifierRatioEstimator,
    DualAscentEstimator,
    EstimatorConfig,
    JSDual,
    LeastSquaresV,
    MonteCarloQ,
    WassersteinDual,
    center,
)
from .functional import Functional, chain_rule_grad, influence_residual, score_function_grad
from .mdp import (
    TabularMdp,
    discounted_occupancy,
    j_rl,
    rl_chain_rule_grad,
    rl_functional,
    rl_influence,
    rl_score_function_grad,
)
from .space import make_rng, softmax, softmax_rows, tv_distance
from .transport import MetricSpace, w1_functional

__all__ = [
    "FUNCTIONALS",
    "DESCENTS",
    "GRAD_KINDS",
    "SADDLE_METHODS",
    "PfdConfig",
    "TraceRecord",
    "PfdResult",
    "pfd_run",
    "descent_gradient_step",
    "descent_global_min",
    "build_functional",
]

FUNCTIONALS = ("js", "ns", "w1", "vi", "rl")
DESCENTS = ("gradient", "global_min", "saddle")
GRAD_KINDS = ("exact_chain_rule", "score_function")
SADDLE_METHODS = ("extragradient", "optimistic", "simultaneous")

# which differentiation steps make sense for which functional
_ESTIMATORS = {
    "js": ("exact", "dual_ascent"),
    "ns": ("exact", "classifier"),
    "w1": ("exact", "dual_ascent"),
    "vi": ("exact", "classifier"),
    "rl": ("exact", "mc_q", "lsq_v"),
}


@dataclass(frozen=True)
class PfdConfig:
    """A complete description of one descent run.

    Parameters
    ----------
    functional : {"js", "ns", "w1", "vi", "rl"}
    context : dict
        ``nu`` (and ``metric`` for ``w1``) for the GAN functionals, ``model``
        (a :class:`LatentModel`) for ``vi``, ``mdp`` for ``rl``.
    estimator : EstimatorConfig
        Differentiation step.
    descent : {"gradient", "global_min", "saddle"}
        ``saddle`` is the dual actor-critic game and only applies to ``rl``.
    grad_kind : {"exact_chain_rule", "score_function"}
    learning_rate : float
        Outer step size (also the policy step for ``saddle``).
    outer_steps : int
    seed : int
        Seeds the single Philox stream all randomness is drawn from.
    target : array, optional
        Reference measure (or policy table) for the TV column of the trace.
    init : array, optional
        Initial measure or policy; uniform by default.
    lr_decay : float
        Step ``k`` uses ``learning_rate * (1 - lr_decay) ** k``; ``0`` keeps
        the step constant.  Non-smooth objectives (``w1``) need a decay to
        stop chattering around the minimiser.
    critic_learning_rate : float
        Value-function step for ``saddle`` descent.
    saddle_method : {"extragradient", "optimistic", "simultaneous"}
        Update rule for ``saddle`` descent.  Plain simultaneous steps cycle
        on the bilinear game; the default extragradient step converges.
    timing : bool
        Record wall-clock milliseconds; off by default so traces are
        reproducible byte for byte.
    trace_residual : bool
        Record the finite-difference influence residual of each estimate.
    """

    functional: str
    context: dict = field(default_factory=dict)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    descent: str = "gradient"
    grad_kind: str = "exact_chain_rule"
    learning_rate: float = 0.1
    outer_steps: int = 100
    seed: int = 0
    target: Optional[Any] = None
    init: Optional[Any] = None
    lr_decay: float = 0.0
    critic_learning_rate: float = 0.5
    saddle_method: str = "extragradient"
    timing: bool = False
    trace_residual: bool = False

    def __post_init__(self):
        if self.functional not in FUNCTIONALS:
            raise ConfigError(f"unknown functional {self.functional!r}; expected one of {FUNCTIONALS}")
        if self.descent not in DESCENTS:
            raise ConfigError(f"unknown descent {self.descent!r}; expected one of {DESCENTS}")
        if self.grad_kind not in GRAD_KINDS:
            raise ConfigError(f"unknown grad_kind {self.grad_kind!r}; expected one of {GRAD_KINDS}")
        if not isinstance(self.estimator, EstimatorConfig):
            raise ConfigError("estimator must be an EstimatorConfig")
        if self.estimator.kind not in _ESTIMATORS[self.functional]:
            raise ConfigError(
                f"estimator {self.estimator.kind!r} does not apply to {self.functional!r}; "
                f"expected one of {_ESTIMATORS[self.functional]}"
            )
        if int(self.outer_steps) != self.outer_steps or self.outer_steps < 0:
            raise ConfigError("outer_steps must be an integer >= 0")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate must be positive and finite")
        if not 0 <= self.lr_decay < 1:
            raise ConfigError("lr_decay must lie in [0, 1)")
        if not (self.critic_learning_rate > 0 and math.isfinite(self.critic_learning_rate)):
            raise ConfigError("critic_learning_rate must be positive and finite")
        if self.saddle_method not in SADDLE_METHODS:
            raise ConfigError(f"unknown saddle_method {self.saddle_method!r}; expected one of {SADDLE_METHODS}")
        if self.functional == "rl":
            if not isinstance(self.context.get("mdp"), TabularMdp):
                raise ConfigError("the rl functional needs context['mdp'] (a TabularMdp)")
        else:
            if self.descent != "gradient":
                raise ConfigError(f"descent {self.descent!r} only applies to the rl functional")
            if self.functional == "vi":
                if not isinstance(self.context.get("model"), LatentModel):
                    raise ConfigError("the vi functional needs context['model'] (a LatentModel)")
            elif "nu" not in self.context:
                raise ConfigError(f"the {self.functional} functional needs context['nu']")
            else:
                try:
                    check_prob_vector(self.context["nu"], "nu")
                except PFDError as exc:
                    raise ConfigError(str(exc)) from None
            if self.functional == "w1" and "metric" not in self.context:
                raise ConfigError("the w1 functional needs context['metric']")


class TraceRecord(NamedTuple):
    """One row of the trace; optional columns are ``None`` when not recorded."""

    step: int
    j_value: float
    grad_norm: Optional[float]
    influence_residual: Optional[float]
    tv_to_target: Optional[float]
    wall_ms: Optional[float]


class PfdResult(NamedTuple):
    """``params`` are logits; ``measure`` the distribution (or policy table)."""

    params: np.ndarray
    measure: np.ndarray
    trace: list


def build_functional(cfg):
    ctx = cfg.context
    if cfg.functional == "js":
        return js_functional(ctx["nu"])
    if cfg.functional == "ns":
        return ns_functional(ctx["nu"])
    if cfg.functional == "w1":
        metric = ctx["metric"]
        return w1_functional(ctx["nu"], metric if isinstance(metric, MetricSpace) else MetricSpace(metric))
    if cfg.functional == "vi":
        return vi_functional(ctx["model"])
    return rl_functional(ctx["mdp"])


def descent_gradient_step(theta, psi_hat, lr, grad_kind="exact_chain_rule", rng=None, samples=100):
    """``theta - lr * grad E_{softmax(theta)}[psi_hat]`` with ``psi_hat`` frozen."""
    if not lr > 0:
        raise ConfigError("learning rate must be positive")
    if grad_kind == "exact_chain_rule":
        g = chain_rule_grad(psi_hat, theta)
    elif grad_kind == "score_function":
        g = score_function_grad(psi_hat, theta, make_rng(0 if rng is None else rng), samples)
    else:
        raise ConfigError(f"unknown grad_kind {grad_kind!r}")
    return np.asarray(theta, dtype=np.float64) - lr * g


def descent_global_min(psi_hat, policy=None):
    """Per state, all conditional mass on ``argmin_a psi_hat(s, a)`` (lowest index on ties)."""
    psi_hat = np.asarray(psi_hat, dtype=np.float64)
    if psi_hat.ndim != 2 or not np.all(np.isfinite(psi_hat)):
        raise NumericalError("psi_hat must be a finite (S, A) table")
    if policy is not None and np.shape(policy) != psi_hat.shape:
        raise ConfigError("policy and psi_hat differ in shape")
    out = np.zeros_like(psi_hat)
    out[np.arange(psi_hat.shape[0]), np.argmin(psi_hat, axis=1)] = 1.0
    return out


def _logits(p):
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.log(p)


class _MeasureProblem:
    """GAN and VI runs: softmax logits over a finite space."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.rng = rng
        self.J = build_functional(cfg)
        ctx = cfg.context
        self.n = ctx["model"].n if cfg.functional == "vi" else np.asarray(ctx["nu"]).size
        est = cfg.estimator
        if est.kind == "dual_ascent":
            dual = JSDual(ctx["nu"]) if cfg.functional == "js" else WassersteinDual(ctx["nu"], ctx["metric"])
            self.inner = DualAscentEstimator(
                dual, learning_rate=est.learning_rate, inner_steps=est.inner_steps,
                tolerance=est.tolerance, warm_start=True,
            )
        elif est.kind == "classifier":
            self.inner = ClassifierRatioEstimator(
                learning_rate=est.learning_rate, inner_steps=est.inner_steps,
                tolerance=est.tolerance, warm_start=True,
            )

    def init_params(self):
        if self.cfg.init is None:
            return np.zeros(self.n)
        init = check_prob_vector(self.cfg.init, "init")
        if init.size != self.n:
            raise ConfigError("init has the wrong size")
        return _logits(init)

    def measure(self, theta):
        return softmax(theta)

    def value(self, theta):
        return self.J(self.measure(theta))

    def estimate(self, theta):
        mu = self.measure(theta)
        kind = self.cfg.estimator.kind
        if kind == "exact":
            return center(self.J.influence(mu), mu)
        if kind == "dual_ascent":
            return self.inner.fit(mu).influence_
        if self.cfg.functional == "ns":
            return self.inner.fit(mu, self.cfg.context["nu"]).log_ratio_
        # adversarial VB: the classifier separates q from the prior
        model = self.cfg.context["model"]
        f_hat = self.inner.fit(mu, model.prior).log_ratio_
        return center(f_hat - np.log(model.likelihood), mu)

    def step(self, theta, psi_hat, lr):
        cfg = self.cfg
        if cfg.grad_kind == "exact_chain_rule":
            g = chain_rule_grad(psi_hat, theta)
        else:
            g = score_function_grad(psi_hat, theta, self.rng, cfg.estimator.samples)
        return theta - lr * g, float(np.linalg.norm(g))

    def residual(self, theta, psi_hat):
        return influence_residual(self.J, psi_hat, self.measure(theta))

    def tv(self, theta):
        return tv_distance(self.measure(theta), self.cfg.target)


class _PolicyProblem:
    """RL runs: per-state softmax logits; ``-inf`` logits encode zero mass."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.rng = rng
        self.mdp = cfg.context["mdp"]
        self.J = rl_functional(self.mdp)
        est = cfg.estimator
        self.critic = MonteCarloQ(samples=est.samples, tolerance=est.tolerance)

    def init_params(self):
        if self.cfg.init is None:
            return np.zeros((self.mdp.S, self.mdp.A))
        return _logits(self.mdp.check_policy(self.cfg.init))

    def measure(self, theta):
        return softmax_rows(theta)

    def value(self, theta):
        return j_rl(self.mdp, self.measure(theta))

    def joint(self, theta):
        return discounted_occupancy(self.mdp, self.measure(theta)).joint

    def estimate(self, theta):
        mdp, kind = self.mdp, self.cfg.estimator.kind
        policy = self.measure(theta)
        if kind == "exact":
            psi = rl_influence(mdp, policy)
        else:
            q_hat = self.critic.fit(mdp, policy, self.rng).q_
            if kind == "mc_q":
                psi = -q_hat / (1.0 - mdp.gamma)
            else:
                v_hat = LeastSquaresV().fit(mdp, policy, q_hat).v_
                psi = -(q_hat - v_hat[:, None]) / (1.0 - mdp.gamma)
        joint = self.joint(theta)
        return center(psi.ravel(), joint.ravel()).reshape(psi.shape)

    def step(self, theta, psi_hat, lr):
        cfg = self.cfg
        if cfg.descent == "global_min":
            policy = descent_global_min(psi_hat, self.measure(theta))
            return _logits(policy), None
        d = discounted_occupancy(self.mdp, self.measure(theta)).d
        if cfg.grad_kind == "exact_chain_rule":
            g = rl_chain_rule_grad(psi_hat, theta, d)
        else:
            g = rl_score_function_grad(psi_hat, theta, d, self.rng, cfg.estimator.samples)
        return theta - lr * g, float(np.linalg.norm(g))

    def residual(self, theta, psi_hat):
        return influence_residual(self.J, psi_hat.ravel(), self.joint(theta).ravel())

    def tv(self, theta):
        # worst per-state total variation between conditionals
        target = self.mdp.check_policy(self.cfg.target)
        return float(0.5 * np.abs(self.measure(theta) - target).sum(axis=1).max())


def pfd_run(cfg):
    """Run the descent loop.

    The trace holds ``outer_steps + 1`` records: record ``k`` describes the
    ``k``-th iterate, with ``grad_norm`` the size of the step taken from it
    (``None`` for the last iterate and for global minimisation).

    Raises
    ------
    NumericalError
        When ``J`` or the parameters become non-finite or an estimate hits
        the simplex boundary; ``exc.trace`` holds the records so far and
        ``exc.step`` the failing step.  :class:`EstimatorDivergence` (a
        subclass) is raised when an inner optimisation diverges.
    """
    if cfg.descent == "saddle":
        from .presets import dual_actor_critic_loop

        theta, policy, _, trace = dual_actor_critic_loop(cfg.context["mdp"], cfg)
        return PfdResult(theta, policy, trace)
    rng = make_rng(cfg.seed)
    problem = _PolicyProblem(cfg, rng) if cfg.functional == "rl" else _MeasureProblem(cfg, rng)
    theta = problem.init_params()
    trace = []
    for k in range(cfg.outer_steps + 1):
        start = time.perf_counter()
        try:
            j = problem.value(theta)
            if not math.isfinite(j):
                raise NumericalError(f"J is not finite ({j!r})")
            last = k == cfg.outer_steps
            psi_hat = None if last and not cfg.trace_residual else problem.estimate(theta)
            if psi_hat is not None and not np.all(np.isfinite(psi_hat)):
                raise NumericalError("influence estimate is not finite")
            residual = problem.residual(theta, psi_hat) if cfg.trace_residual else None
            tv = problem.tv(theta) if cfg.target is not None else None
            grad_norm = None
            if not last:
                lr = cfg.learning_rate * (1.0 - cfg.lr_decay) ** k
                new_theta, grad_norm = problem.step(theta, psi_hat, lr)
                if np.any(np.isnan(new_theta)) or np.any(new_theta == np.inf):
                    raise NumericalError("parameters are not finite")
        except ConfigError:
            raise
        except EstimatorDivergence as exc:
            raise EstimatorDivergence(f"step {k}: {exc}", trace=trace, step=k) from exc
        except PFDError as exc:
            raise NumericalError(f"step {k}: {exc}", trace=trace, step=k) from exc
        wall = (time.perf_counter() - start) * 1e3 if cfg.timing else None
        trace.append(TraceRecord(k, j, grad_norm, residual, tv, wall))
        if not last:
            theta = new_theta
    return PfdResult(theta, problem.measure(theta), trace)
