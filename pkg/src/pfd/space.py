"""Finite sample spaces, measures on them, and the softmax parameterisation.

Probability vectors and signed vectors are plain float64 numpy arrays; the
helpers here validate them at the boundary of each operation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._validation import (
    DomainError,
    as_float_array,
    check_prob_vector,
    check_same_shape,
)

__all__ = [
    "FiniteSpace",
    "make_rng",
    "softmax",
    "softmax_rows",
    "mix",
    "tv_distance",
    "sample",
    "random_interior",
    "uniform",
]


@dataclass(frozen=True)
class FiniteSpace:
    """Points ``0..n-1`` with optional text labels."""

    n: int
    labels: Optional[Sequence[str]] = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"a finite space needs n >= 1 points, got {self.n!r}")
        if self.labels is not None and len(self.labels) != self.n:
            raise DomainError("labels must name every point")

    def label(self, i):
        return str(i) if self.labels is None else self.labels[i]


def make_rng(seed):
    """Counter-based generator (Philox) so streams are platform independent."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def softmax(theta):
    """Map unconstrained logits to a strictly positive probability vector."""
    theta = as_float_array(theta, "theta")
    z = np.exp(theta - theta.max())
    return z / z.sum()


def softmax_rows(logits):
    """Row-wise softmax of a 2-d table, e.g. per-state action logits."""
    logits = as_float_array(logits, "logits", ndim=2)
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def mix(mu, nu, eps):
    """Return ``(1 - eps) * mu + eps * nu``."""
    if not 0.0 <= eps <= 1.0:
        raise DomainError(f"eps must lie in [0, 1], got {eps!r}")
    mu = check_prob_vector(mu, "mu")
    nu = check_prob_vector(nu, "nu")
    check_same_shape(mu, nu)
    if eps == 0.0:
        return mu.copy()
    if eps == 1.0:
        return nu.copy()
    return (1.0 - eps) * mu + eps * nu


def tv_distance(mu, nu):
    mu = as_float_array(mu, "mu")
    nu = as_float_array(nu, "nu")
    check_same_shape(mu, nu)
    return 0.5 * float(np.sum(np.abs(mu - nu)))


def sample(mu, rng, count):
    """Draw ``count`` i.i.d. point indices from ``mu``."""
    mu = check_prob_vector(mu, "mu")
    if int(count) != count or count < 0:
        raise DomainError(f"count must be a non-negative integer, got {count!r}")
    rng = make_rng(rng)
    cdf = np.cumsum(mu)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(int(count)), side="right")
    # zero-mass trailing points share the final cdf value; never land on them
    return np.minimum(idx, int(np.flatnonzero(mu > 0)[-1]))


def uniform(n):
    return np.full(n, 1.0 / n)


def random_interior(rng, n, floor=0.05):
    """Dirichlet(1) draw mixed with ``floor`` of the uniform measure.

    The floor keeps every mass at least ``floor / n`` so log-type functionals
    stay well conditioned under finite differencing.
    """
    rng = make_rng(rng)
    return (1.0 - floor) * rng.dirichlet(np.ones(n)) + floor / n
