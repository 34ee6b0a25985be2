"""Influence-function estimators for the differentiation step.

Each estimator is a small scikit-learn style object: hyper-parameters go to
``__init__`` (so ``get_params``/``set_params``/``clone`` work), ``fit``
learns from the current measure and stores results in trailing-underscore
attributes.  ``warm_start=True`` keeps the learned parameters between fits,
which is how the simultaneous-update GAN presets refresh their critic.

The ``estimate_*`` functions are one-shot wrappers around the classes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    ConfigError,
    DomainError,
    EstimatorDivergence,
    UnsupportedOperation,
    as_float_array,
    check_interior,
    check_prob_vector,
    check_same_shape,
)
from .divergences import HALF_LOG2
from .space import make_rng
from .transport import MetricSpace, c_transform, lipschitz_projection

__all__ = [
    "EstimatorConfig",
    "ESTIMATOR_KINDS",
    "center",
    "JSDual",
    "WassersteinDual",
    "DualAscentEstimator",
    "ClassifierRatioEstimator",
    "MonteCarloQ",
    "LeastSquaresV",
    "estimate_exact",
    "estimate_dual_ascent",
    "estimate_classifier",
    "estimate_mc_q",
    "estimate_lsq_v",
    "rollout_horizon",
]

ESTIMATOR_KINDS = ("exact", "dual_ascent", "classifier", "mc_q", "lsq_v")
MAX_REGRESSIONS = 50


@dataclass(frozen=True)
class EstimatorConfig:
    """How the differentiation step is carried out."""

    kind: str = "exact"
    inner_steps: int = 100
    learning_rate: float = 0.1
    samples: int = 100
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ConfigError(f"unknown estimator kind {self.kind!r}; expected one of {ESTIMATOR_KINDS}")
        if int(self.inner_steps) != self.inner_steps or self.inner_steps < 1:
            raise ConfigError("inner_steps must be an integer >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if int(self.samples) != self.samples or self.samples < 1:
            raise ConfigError("samples must be an integer >= 1")
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be positive")


def center(psi, mu):
    """Shift ``psi`` to zero mean under ``mu``."""
    psi = as_float_array(psi, "psi")
    mu = np.asarray(mu, dtype=np.float64)
    check_same_shape(psi, mu, ("psi", "mu"))
    return psi - float(np.dot(mu, psi))


def estimate_exact(J, mu):
    if not J.has_influence:
        raise UnsupportedOperation(f"{J.name} has no exact influence function")
    mu = check_prob_vector(mu, "mu")
    return center(J.influence(mu), mu)


# --------------------------------------------------------------------------
# convex-dual (adversarial) estimation
# --------------------------------------------------------------------------


class JSDual:
    """``phi -> <phi, mu> - JS*(phi)`` in the unconstrained logit chart.

    ``phi = log(2 sigmoid(u)) / 2`` keeps ``phi < log(2)/2`` for every real
    ``u``; the objective is concave in ``u`` and maximised where
    ``sigmoid(u) = mu / (mu + nu)``.
    """

    def __init__(self, nu):
        self.nu = check_prob_vector(nu, "nu")

    def init_params(self, n):
        return np.zeros(n)

    def phi(self, u):
        return HALF_LOG2 + 0.5 * log_expit(u)

    def objective(self, u, mu):
        # -JS*(phi) = 1/2 E_nu[log(2 - 2 sigmoid(u))]
        conj = -0.5 * math.fsum(self.nu * (math.log(2.0) + log_expit(-u)))
        return math.fsum(mu * self.phi(u)) - conj

    def gradient(self, u, mu):
        s = expit(u)
        return 0.5 * mu * (1.0 - s) - 0.5 * self.nu * s

    def project(self, u, mu):
        return u


class WassersteinDual:
    """``phi -> <phi, mu - nu>`` over 1-Lipschitz ``phi``.

    Each ascent step is followed by the Euclidean projection onto the
    1-Lipschitz set, a c-transform that removes rounding-level violations,
    and a re-centring under ``mu`` (constants do not change the objective
    because ``mu - nu`` has zero total mass).
    """

    def __init__(self, nu, metric):
        self.nu = check_prob_vector(nu, "nu")
        self.metric = metric if isinstance(metric, MetricSpace) else MetricSpace(metric)

    def init_params(self, n):
        return np.zeros(n)

    def phi(self, params):
        return params

    def objective(self, params, mu):
        return math.fsum(params * (mu - self.nu))

    def gradient(self, params, mu):
        return mu - self.nu

    def project(self, params, mu):
        return center(c_transform(lipschitz_projection(params, self.metric), self.metric), mu)


class DualAscentEstimator(BaseEstimator):
    """Gradient ascent on ``phi -> E_mu[phi] - J*(phi)``.

    The maximiser is an influence function of ``J`` at ``mu`` and the
    maximum equals ``J(mu)``.

    Parameters
    ----------
    dual : JSDual or WassersteinDual
        Conjugate evaluator with ``objective``, ``gradient`` and ``project``.
    learning_rate : float
        Initial step; halved whenever a step lowers the objective.
    inner_steps : int
        Step budget per call to ``fit``.
    tolerance : float
        Stop once a step moves every parameter by less than this.
    warm_start : bool
        Continue from the previous solution instead of ``dual.init_params``.

    Attributes
    ----------
    params_ : ndarray
        Raw ascent variables.
    influence_ : ndarray
        ``phi`` centred to zero mean under the fitted ``mu``.
    value_ : float
        Achieved objective ``<phi, mu> - J*(phi)``.
    n_iter_ : int
        Accepted steps in the last fit.
    """

    def __init__(self, dual=None, learning_rate=0.1, inner_steps=100, tolerance=1e-8, warm_start=False):
        self.dual = dual
        self.learning_rate = learning_rate
        self.inner_steps = inner_steps
        self.tolerance = tolerance
        self.warm_start = warm_start

    def fit(self, mu):
        if self.dual is None:
            raise ConfigError("DualAscentEstimator needs a dual objective")
        mu = check_prob_vector(mu, "mu")
        if self.warm_start and hasattr(self, "params_"):
            params = self.params_
        else:
            params = self.dual.project(self.dual.init_params(mu.size), mu)
        params, value, n_iter = _gradient_ascent(
            lambda p: self.dual.objective(p, mu),
            lambda p: self.dual.gradient(p, mu),
            lambda p: self.dual.project(p, mu),
            params,
            self.learning_rate,
            self.inner_steps,
            self.tolerance,
        )
        self.params_ = params
        self.value_ = value
        self.n_iter_ = n_iter
        self.influence_ = center(self.dual.phi(params), mu)
        return self


def _gradient_ascent(objective, gradient, project, params, lr, steps, tol):
    """Projected gradient ascent that halves ``lr`` on every rejected step."""
    value = objective(params)
    if not np.isfinite(value):
        raise EstimatorDivergence("inner objective is not finite at the starting point")
    regressions = 0
    accepted = 0
    for _ in range(steps):
        candidate = project(params + lr * gradient(params))
        new_value = objective(candidate)
        if not np.isfinite(new_value) or new_value < value - 1e-15 * max(1.0, abs(value)):
            regressions += 1
            if regressions >= MAX_REGRESSIONS:
                raise EstimatorDivergence(
                    f"inner objective regressed {MAX_REGRESSIONS} times in a row (last lr {lr:.3g})"
                )
            lr *= 0.5
            continue
        regressions = 0
        accepted += 1
        moved = float(np.max(np.abs(candidate - params)))
        params, value = candidate, new_value
        if moved < tol:
            break
    return params, value, accepted


def estimate_dual_ascent(dual, mu, cfg, init=None):
    """Run dual ascent once; returns ``(centred phi, achieved value)``."""
    est = DualAscentEstimator(
        dual, learning_rate=cfg.learning_rate, inner_steps=cfg.inner_steps, tolerance=cfg.tolerance
    )
    if init is not None:
        est.set_params(warm_start=True)
        est.params_ = np.asarray(init, dtype=np.float64)
    est.fit(mu)
    return est.influence_, est.value_


# --------------------------------------------------------------------------
# binary-classifier likelihood ratio
# --------------------------------------------------------------------------


class ClassifierRatioEstimator(BaseEstimator):
    """Tabular logistic discriminator between ``mu`` (label 0) and ``nu`` (label 1).

    Minimises ``-1/2 E_nu[log D] - 1/2 E_mu[log(1 - D)]`` over per-point
    logits ``a`` with ``D = sigmoid(a)``.  At the optimum
    ``D = nu / (mu + nu)`` and ``log((1 - D) / D) = log(mu / nu)``.

    Attributes
    ----------
    logits_ : ndarray
    discriminator_ : ndarray
        ``D`` in ``(0, 1)``.
    log_ratio_ : ndarray
        ``log((1 - D) / D)`` centred under ``mu``.
    loss_ : float
    n_iter_ : int
    """

    def __init__(self, learning_rate=0.1, inner_steps=100, tolerance=1e-8, warm_start=False):
        self.learning_rate = learning_rate
        self.inner_steps = inner_steps
        self.tolerance = tolerance
        self.warm_start = warm_start

    def fit(self, mu, nu):
        mu = check_interior(mu, "mu")
        nu = check_interior(nu, "nu")
        check_same_shape(mu, nu)
        if self.warm_start and hasattr(self, "logits_"):
            a = self.logits_
        else:
            a = np.zeros(mu.size)

        def neg_loss(a):
            return 0.5 * math.fsum(nu * log_expit(a)) + 0.5 * math.fsum(mu * log_expit(-a))

        def neg_grad(a):
            d = expit(a)
            return 0.5 * nu * (1.0 - d) - 0.5 * mu * d

        a, value, n_iter = _gradient_ascent(
            neg_loss, neg_grad, lambda a: a, a, self.learning_rate, self.inner_steps, self.tolerance
        )
        self.logits_ = a
        self.discriminator_ = expit(a)
        self.log_ratio_ = center(-a, mu)
        self.loss_ = -value
        self.n_iter_ = n_iter
        return self

    def predict_proba(self, X=None):
        """Probability that each point (or the points indexed by ``X``) came from ``nu``."""
        check_is_fitted(self, "logits_")
        d = self.discriminator_
        return d.copy() if X is None else d[np.asarray(X)]


def estimate_classifier(mu, nu, cfg):
    """Returns ``(D, centred log((1 - D) / D))``."""
    est = ClassifierRatioEstimator(
        learning_rate=cfg.learning_rate, inner_steps=cfg.inner_steps, tolerance=cfg.tolerance
    ).fit(mu, nu)
    return est.discriminator_, est.log_ratio_


# --------------------------------------------------------------------------
# reinforcement-learning critics
# --------------------------------------------------------------------------


def rollout_horizon(gamma, r_max, tolerance):
    """Smallest ``T`` with ``gamma^T r_max / (1 - gamma) <= tolerance``."""
    if gamma == 0 or r_max == 0:
        return 1
    T = math.ceil(math.log(tolerance * (1.0 - gamma) / r_max) / math.log(gamma))
    return max(int(T), 1)


def _sample_rows(cdf, rows, u):
    """Inverse-CDF draw from the row ``rows[k]`` of ``cdf`` for each ``u[k]``."""
    idx = (u[:, None] >= cdf[rows]).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


class MonteCarloQ(BaseEstimator):
    """Truncated discounted returns from rollouts started at every ``(s, a)``.

    The truncation horizon is chosen so the bias is at most ``tolerance``.

    Attributes
    ----------
    q_ : ndarray (S, A)
    stderr_ : ndarray (S, A)
    returns_ : ndarray (samples, S, A)
        Individual rollout returns.
    horizon_ : int
    """

    def __init__(self, samples=100, tolerance=1e-6, random_state=0):
        self.samples = samples
        self.tolerance = tolerance
        self.random_state = random_state

    def fit(self, mdp, policy, rng=None):
        policy = mdp.check_policy(policy)
        rng = make_rng(self.random_state if rng is None else rng)
        S, A, n = mdp.S, mdp.A, int(self.samples)
        T = rollout_horizon(mdp.gamma, float(np.max(np.abs(mdp.R))), self.tolerance)
        p_cdf = np.cumsum(mdp.P, axis=2).reshape(S * A, S)
        pi_cdf = np.cumsum(policy, axis=1)
        s = np.repeat(np.arange(S), A)[None, :].repeat(n, axis=0).ravel()
        a = np.tile(np.arange(A), S)[None, :].repeat(n, axis=0).ravel()
        total = np.zeros(s.size)
        discount = 1.0
        for t in range(T):
            total += discount * mdp.R[s, a]
            discount *= mdp.gamma
            if t == T - 1:
                break
            s = _sample_rows(p_cdf, s * A + a, rng.random(s.size))
            a = _sample_rows(pi_cdf, s, rng.random(s.size))
        returns = total.reshape(n, S, A)
        self.returns_ = returns
        self.horizon_ = T
        self.q_ = returns.mean(axis=0)
        if n > 1:
            self.stderr_ = returns.std(axis=0, ddof=1) / math.sqrt(n)
        else:
            self.stderr_ = np.full((S, A), np.inf)
        return self


def estimate_mc_q(mdp, policy, rng, cfg):
    return MonteCarloQ(samples=cfg.samples, tolerance=cfg.tolerance).fit(mdp, policy, rng).q_


class LeastSquaresV(BaseEstimator):
    """Weighted least-squares state values fitted to ``E_pi[Q_hat(s, .)]``.

    With one-hot (tabular) features the fit interpolates every state that
    carries weight; zero-weight states are left as ``nan`` with a warning.
    """

    def fit(self, mdp, policy, q, weights=None):
        policy = mdp.check_policy(policy)
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (mdp.S, mdp.A):
            raise DomainError(f"Q estimates must have shape {(mdp.S, mdp.A)}")
        w = np.full(mdp.S, 1.0 / mdp.S) if weights is None else check_prob_vector(weights, "weights")
        targets = np.sum(policy * q, axis=1)
        seen = w > 0
        features = np.eye(mdp.S)[seen][:, seen] * np.sqrt(w[seen])[:, None]
        coef, *_ = np.linalg.lstsq(features, np.sqrt(w[seen]) * targets[seen], rcond=None)
        v = np.full(mdp.S, np.nan)
        v[seen] = coef
        if not seen.all():
            warnings.warn(
                f"states {np.flatnonzero(~seen).tolist()} carry no weight; their value is undefined",
                RuntimeWarning,
                stacklevel=2,
            )
        self.v_ = v
        self.undefined_ = np.flatnonzero(~seen)
        return self


def estimate_lsq_v(mdp, policy, q_estimates, weights):
    return LeastSquaresV().fit(mdp, policy, q_estimates, weights).v_
