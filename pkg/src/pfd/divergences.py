"""GAN and variational-inference objectives with exact influence functions.

All logarithms are natural.  Zero masses follow ``0 log 0 = 0``; a value that
is genuinely infinite (absolute continuity fails) is returned as ``inf``,
while an influence function that would need ``log 0`` raises
:class:`~pfd._validation.BoundaryError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import rel_entr

from ._validation import (
    BoundaryError,
    DomainError,
    as_float_array,
    check_prob_vector,
    check_same_shape,
)
from .functional import Functional

__all__ = [
    "LatentModel",
    "js_value",
    "js_influence",
    "js_conjugate",
    "js_conjugate_grad",
    "ns_value",
    "ns_influence",
    "vi_value",
    "vi_influence",
    "elbo",
    "js_functional",
    "ns_functional",
    "vi_functional",
    "HALF_LOG2",
]

HALF_LOG2 = 0.5 * math.log(2.0)


def _pair(mu, nu):
    mu = check_prob_vector(mu, "mu")
    nu = check_prob_vector(nu, "nu")
    check_same_shape(mu, nu)
    return mu, nu


def js_value(mu, nu):
    """Jensen-Shannon divergence; finite for every pair of measures."""
    mu, nu = _pair(mu, nu)
    m = 0.5 * (mu + nu)
    return 0.5 * math.fsum(rel_entr(mu, m)) + 0.5 * math.fsum(rel_entr(nu, m))


def js_influence(mu, nu):
    mu, nu = _pair(mu, nu)
    if np.any(mu <= 0):
        raise BoundaryError("JS influence is log-singular where mu has no mass")
    return 0.5 * np.log(mu / (mu + nu))


def js_conjugate(phi, nu):
    """Convex conjugate of ``mu -> JS(mu, nu)`` over non-negative measures.

    ``-1/2 E_nu[log(2 - exp(2 phi))]``, finite iff ``phi < log(2)/2`` where
    ``nu`` has mass and ``phi <= log(2)/2`` where it has none.
    """
    phi = as_float_array(phi, "phi")
    nu = check_prob_vector(nu, "nu")
    check_same_shape(phi, nu, ("phi", "nu"))
    charged = nu > 0
    if np.any(phi[charged] >= HALF_LOG2) or np.any(phi[~charged] > HALF_LOG2):
        return math.inf
    terms = nu[charged] * np.log(2.0 - np.exp(2.0 * phi[charged]))
    return -0.5 * math.fsum(terms)


def js_conjugate_grad(phi, nu):
    phi = as_float_array(phi, "phi")
    nu = check_prob_vector(nu, "nu")
    e = np.exp(2.0 * phi)
    return nu * e / (2.0 - e)


def ns_value(mu, nu):
    """Reverse KL divergence ``KL(mu || nu)``, ``inf`` when mu charges a nu-null point."""
    mu, nu = _pair(mu, nu)
    return math.fsum(rel_entr(mu, nu))


def ns_influence(mu, nu):
    mu, nu = _pair(mu, nu)
    if np.any(mu <= 0) or np.any(nu <= 0):
        raise BoundaryError("log(mu/nu) needs strictly positive mu and nu")
    return np.log(mu) - np.log(nu)


@dataclass(frozen=True)
class LatentModel:
    """Prior ``p(z)`` and likelihood ``p(x_obs | z)`` over a finite latent space."""

    prior: np.ndarray
    likelihood: np.ndarray

    def __post_init__(self):
        prior = check_prob_vector(self.prior, "prior")
        lik = as_float_array(self.likelihood, "likelihood")
        check_same_shape(prior, lik, ("prior", "likelihood"))
        if np.any(lik < 0) or not np.all(np.isfinite(lik)):
            raise DomainError("likelihood entries must be finite and non-negative")
        if not math.fsum(lik * prior) > 0:
            raise DomainError("evidence p(x) must be positive")
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "likelihood", lik)

    @property
    def n(self):
        return self.prior.size

    @property
    def joint(self):
        return self.likelihood * self.prior

    @property
    def evidence(self):
        return math.fsum(self.joint)

    @property
    def log_evidence(self):
        return math.log(self.evidence)

    @property
    def posterior(self):
        return self.joint / self.evidence


def elbo(q, model):
    """``E_q[log(p(x|z) p(z) / q(z))]``; ``-inf`` if q charges a zero-joint point."""
    q = check_prob_vector(q, "q")
    check_same_shape(q, model.prior, ("q", "prior"))
    return -math.fsum(rel_entr(q, model.joint))


def vi_value(q, model):
    """``KL(q || p(z|x))`` computed as ``log p(x) - ELBO(q)``."""
    return model.log_evidence - elbo(q, model)


def vi_influence(q, model):
    q = check_prob_vector(q, "q")
    check_same_shape(q, model.prior, ("q", "prior"))
    joint = model.joint
    if np.any(q <= 0) or np.any(joint <= 0):
        raise BoundaryError("log(q / p(x,z)) needs strictly positive q and joint")
    return np.log(q) - np.log(joint)


def js_functional(nu):
    nu = check_prob_vector(nu, "nu")
    return Functional(
        "js",
        value=lambda mu: js_value(mu, nu),
        influence=lambda mu: js_influence(mu, nu),
        context={"nu": nu},
    )


def ns_functional(nu):
    nu = check_prob_vector(nu, "nu")
    return Functional(
        "ns",
        value=lambda mu: ns_value(mu, nu),
        influence=lambda mu: ns_influence(mu, nu),
        context={"nu": nu},
    )


def vi_functional(model):
    return Functional(
        "vi",
        value=lambda q: vi_value(q, model),
        influence=lambda q: vi_influence(q, model),
        context={"model": model},
    )
