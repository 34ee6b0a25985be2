"""Random problem instances shared by the presets, the CLI and the checks."""

from __future__ import annotations

import numpy as np

from .divergences import LatentModel
from .mdp import TabularMdp
from .space import make_rng

__all__ = ["random_target", "random_latent_model", "random_mdp"]


def random_target(rng, n, floor=0.2):
    """``(1 - floor) * Dirichlet(1) + floor / n``: random but bounded away from 0."""
    rng = make_rng(rng)
    return (1.0 - floor) * rng.dirichlet(np.ones(n)) + floor / n


def random_latent_model(rng, n):
    """Interior prior with likelihoods of one observation drawn from ``U(0.05, 1)``."""
    rng = make_rng(rng)
    prior = random_target(rng, n)
    likelihood = rng.uniform(0.05, 1.0, size=n)
    return LatentModel(prior=prior, likelihood=likelihood)


def random_mdp(rng, S, A, gamma=0.9):
    """Dense random MDP: Dirichlet transitions, uniform rewards in ``[0, 1)``."""
    rng = make_rng(rng)
    P = rng.dirichlet(np.ones(S), size=(S, A))
    R = rng.random((S, A))
    p0 = rng.dirichlet(np.ones(S))
    return TabularMdp(p0=p0, P=P, R=R, gamma=gamma)
