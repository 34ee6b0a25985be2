"""Probability functionals, their Gateaux derivatives and the chain rule.

A :class:`Functional` bundles ``J`` with an optional exact influence map.
Everything numeric about derivatives in the package reduces to the
identity ``d/de J(mu + e (nu - mu)) = <psi, nu - mu>``, which
:func:`gateaux_fd` and :func:`influence_residual` check by differencing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._validation import (
    NumericalError,
    UnsupportedOperation,
    as_float_array,
    check_positive_int,
    check_prob_vector,
    check_same_shape,
)
from .space import make_rng, softmax

__all__ = [
    "Functional",
    "linear_functional",
    "gateaux_fd",
    "default_probes",
    "influence_residual",
    "linearize",
    "chain_rule_grad",
    "score_function_grad",
    "FD_STEP",
]

FD_STEP = 1e-5


@dataclass(frozen=True)
class Functional:
    """A map from probability vectors to the extended reals.

    Parameters
    ----------
    name : str
        Short identifier (``"js"``, ``"ns"``, ...).
    value : callable
        ``mu -> float``; may return ``inf``.
    influence : callable, optional
        ``mu -> ndarray``, an exact influence function at ``mu``.
    context : dict
        The fixed data the functional closes over (target measure, model...).
    """

    name: str
    value: Callable[[np.ndarray], float]
    influence: Optional[Callable[[np.ndarray], np.ndarray]] = None
    context: dict = field(default_factory=dict)

    def __call__(self, mu):
        return float(self.value(mu))

    @property
    def has_influence(self):
        return self.influence is not None


def linear_functional(c):
    """``J(mu) = <c, mu>``; its influence function is ``c`` everywhere."""
    c = as_float_array(c, "c").copy()
    return Functional(
        "linear",
        value=lambda mu: float(np.dot(c, mu)),
        influence=lambda mu: c.copy(),
        context={"c": c},
    )


def _evaluate(J, point, side):
    val = J(point)
    if not np.isfinite(val):
        raise NumericalError(f"{J.name}: functional is not finite at the {side} probe")
    return val


def gateaux_fd(J, mu, nu, eps=FD_STEP):
    """Finite-difference Gateaux derivative of ``J`` at ``mu`` towards ``nu``.

    Central differences are used whenever ``mu - eps * (nu - mu)`` stays on
    the simplex; otherwise the one-sided quotient from the definition.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = check_prob_vector(mu, "mu")
    nu = check_prob_vector(nu, "nu")
    check_same_shape(mu, nu)
    chi = nu - mu
    forward = mu + eps * chi
    backward = mu - eps * chi
    j_plus = _evaluate(J, forward, "forward")
    if np.all(backward >= 0):
        j_minus = _evaluate(J, backward, "backward")
        return (j_plus - j_minus) / (2.0 * eps)
    return (j_plus - _evaluate(J, mu, "base")) / eps


def default_probes(mu, rng=0, count=100):
    """Uniform Dirichlet draws plus the vertex-pulled mixtures ``0.9 mu + 0.1 e_i``."""
    mu = check_prob_vector(mu, "mu")
    rng = make_rng(rng)
    n = mu.size
    probes = list(rng.dirichlet(np.ones(n), size=count))
    eye = np.eye(n)
    probes.extend(0.9 * mu + 0.1 * eye[i] for i in range(n))
    return probes


def influence_residual(J, psi, mu, probes=None, eps=FD_STEP, rng=0):
    """Largest gap between the differenced derivative and ``<psi, nu - mu>``."""
    psi = as_float_array(psi, "psi")
    mu = check_prob_vector(mu, "mu")
    check_same_shape(psi, mu, ("psi", "mu"))
    if probes is None:
        probes = default_probes(mu, rng)
    if len(probes) == 0:
        raise ValueError("need at least one probe")
    worst = 0.0
    for nu in probes:
        nu = np.asarray(nu, dtype=np.float64)
        gap = abs(gateaux_fd(J, mu, nu, eps) - float(np.dot(psi, nu - mu)))
        worst = max(worst, gap)
    return worst


def linearize(J, mu0):
    """Von Mises linearisation ``nu -> J(mu0) + <psi_mu0, nu - mu0>``."""
    if not J.has_influence:
        raise UnsupportedOperation(f"{J.name} has no exact influence function")
    mu0 = check_prob_vector(mu0, "mu0")
    j0 = J(mu0)
    psi = np.asarray(J.influence(mu0), dtype=np.float64)

    def tangent(nu):
        return j0 + float(np.dot(psi, np.asarray(nu, dtype=np.float64) - mu0))

    return tangent


def chain_rule_grad(psi_hat, theta):
    """Exact gradient of ``theta -> E_{softmax(theta)}[psi_hat]`` with psi_hat frozen."""
    psi_hat = as_float_array(psi_hat, "psi_hat")
    p = softmax(theta)
    check_same_shape(psi_hat, p, ("psi_hat", "theta"))
    return p * (psi_hat - np.dot(p, psi_hat))


def score_function_grad(psi_hat, theta, rng, samples, return_stderr=False):
    """Monte Carlo log-derivative estimate of :func:`chain_rule_grad`.

    Each draw ``x ~ softmax(theta)`` contributes ``psi_hat[x] * (e_x - p)``.
    With ``return_stderr`` the per-coordinate standard error is returned too.
    """
    samples = check_positive_int(samples, "samples")
    psi_hat = as_float_array(psi_hat, "psi_hat")
    p = softmax(theta)
    check_same_shape(psi_hat, p, ("psi_hat", "theta"))
    rng = make_rng(rng)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    draws = np.searchsorted(cdf, rng.random(samples), side="right")
    per_draw = -np.outer(psi_hat[draws], p)
    per_draw[np.arange(samples), draws] += psi_hat[draws]
    mean = per_draw.mean(axis=0)
    if not return_stderr:
        return mean
    if samples == 1:
        return mean, np.full_like(mean, np.inf)
    return mean, per_draw.std(axis=0, ddof=1) / np.sqrt(samples)
