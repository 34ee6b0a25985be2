"""Tabular Markov decision processes.

Infinite-horizon quantities (values, occupancies) come from direct linear
solves; truncation only appears inside the Monte Carlo estimators.  Reward
noise is represented by its conditional mean ``R(s, a)``, which is all the
objective and its influence function depend on.

A policy is an ``(S, A)`` table of conditionals ``pi(a | s)``.  Logit tables
are mapped to policies with :func:`pfd.space.softmax_rows`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._validation import (
    DomainError,
    NumericalError,
    as_float_array,
    check_positive_int,
    check_prob_vector,
)
from .functional import Functional
from .space import make_rng, softmax_rows

__all__ = [
    "TabularMdp",
    "Occupancy",
    "policy_eval",
    "discounted_occupancy",
    "j_rl",
    "rl_influence",
    "rl_chain_rule_grad",
    "rl_score_function_grad",
    "rl_functional",
    "conditional_from_joint",
    "greedy_policy",
    "bellman_apply",
    "dac_objective",
    "policy_iteration",
    "uniform_policy",
    "load_mdp",
    "save_mdp",
    "parse_mdp",
    "format_mdp",
]


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP ``(p0, P, R, gamma)``.

    Parameters
    ----------
    p0 : array of shape (S,)
        Initial state distribution.
    P : array of shape (S, A, S)
        ``P[s, a, t] = p(t | s, a)``.
    R : array of shape (S, A)
        Expected immediate reward.
    gamma : float
        Discount in ``(0, 1)``.
    """

    p0: np.ndarray
    P: np.ndarray
    R: np.ndarray
    gamma: float

    def __post_init__(self):
        p0 = check_prob_vector(self.p0, "p0")
        P = as_float_array(self.P, "P", ndim=3)
        R = as_float_array(self.R, "R", ndim=2)
        S = p0.size
        if P.shape[0] != S or P.shape[2] != S:
            raise DomainError(f"P must have shape (S, A, S) with S={S}, got {P.shape}")
        A = P.shape[1]
        if R.shape != (S, A):
            raise DomainError(f"R must have shape {(S, A)}, got {R.shape}")
        if not np.all(np.isfinite(R)):
            raise DomainError("rewards must be finite")
        for s in range(S):
            for a in range(A):
                check_prob_vector(P[s, a], f"P(.|{s},{a})")
        gamma = float(self.gamma)
        if not 0.0 < gamma < 1.0:
            raise DomainError(f"gamma must lie in (0, 1), got {gamma!r}")
        for name, arr in (("p0", p0), ("P", P), ("R", R)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma", gamma)

    @property
    def S(self):
        return self.P.shape[0]

    @property
    def A(self):
        return self.P.shape[1]

    def check_policy(self, policy):
        policy = as_float_array(policy, "policy", ndim=2)
        if policy.shape != (self.S, self.A):
            raise DomainError(f"policy must have shape {(self.S, self.A)}, got {policy.shape}")
        for s in range(self.S):
            check_prob_vector(policy[s], f"policy[{s}]")
        return policy

    def transition_under(self, policy):
        """State-to-state kernel ``P_pi[s, t] = sum_a pi(a|s) P(t|s, a)``."""
        return np.einsum("sa,sat->st", policy, self.P)


class Occupancy(NamedTuple):
    d: np.ndarray
    joint: np.ndarray


def uniform_policy(S, A):
    return np.full((S, A), 1.0 / A)


def _solve(M, b, what):
    try:
        x = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what}: linear solve failed ({exc})") from exc
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{what}: non-finite solution")
    return x


def policy_eval(mdp, policy):
    """Exact ``(V, Q)`` from ``(I - gamma P_pi) V = R_pi``."""
    policy = mdp.check_policy(policy)
    P_pi = mdp.transition_under(policy)
    R_pi = np.sum(policy * mdp.R, axis=1)
    V = _solve(np.eye(mdp.S) - mdp.gamma * P_pi, R_pi, "policy evaluation")
    Q = mdp.R + mdp.gamma * (mdp.P @ V)
    return V, Q


def discounted_occupancy(mdp, policy):
    """``d = (1 - gamma) sum_t gamma^t p_t`` from the Bellman flow equation."""
    policy = mdp.check_policy(policy)
    P_pi = mdp.transition_under(policy)
    d = _solve(np.eye(mdp.S) - mdp.gamma * P_pi.T, (1.0 - mdp.gamma) * mdp.p0, "occupancy")
    # the solve is exact up to rounding; clip the rounding-level negatives
    d = np.clip(d, 0.0, None)
    d /= d.sum()
    return Occupancy(d, d[:, None] * policy)


def j_rl(mdp, policy):
    """Negated expected discounted return, ``-E_joint[R] / (1 - gamma)``."""
    occ = discounted_occupancy(mdp, policy)
    return -math.fsum((occ.joint * mdp.R).ravel()) / (1.0 - mdp.gamma)


def rl_influence(mdp, policy, reference="occupancy"):
    """Influence function of ``J_RL`` on state-action pairs.

    ``Psi(s, a) = -(sum_t gamma^t p_t(s) / rho(s)) (Q(s, a) - V(s))`` for a
    reference state distribution ``rho``.  The default ``rho = d^pi`` gives
    the scaled negative advantage ``-(Q - V) / (1 - gamma)``.

    Parameters
    ----------
    reference : {"occupancy", "uniform"} or array of shape (S,)
    """
    policy = mdp.check_policy(policy)
    V, Q = policy_eval(mdp, policy)
    advantage = Q - V[:, None]
    d = discounted_occupancy(mdp, policy).d
    if isinstance(reference, str):
        if reference == "occupancy":
            return -advantage / (1.0 - mdp.gamma)
        if reference == "uniform":
            rho = np.full(mdp.S, 1.0 / mdp.S)
        else:
            raise DomainError(f"unknown reference distribution {reference!r}")
    else:
        rho = check_prob_vector(reference, "reference")
        if rho.size != mdp.S:
            raise DomainError("reference distribution must cover every state")
    visited = d > 0
    if np.any(rho[visited] <= 0):
        s = int(np.flatnonzero(visited & (rho <= 0))[0])
        raise DomainError(f"reference distribution has no mass on reachable state {s}")
    weight = np.zeros(mdp.S)
    weight[visited] = d[visited] / ((1.0 - mdp.gamma) * rho[visited])
    return -weight[:, None] * advantage


def rl_chain_rule_grad(psi_hat, logits, state_weights):
    """Gradient of ``theta -> sum_s w(s) E_{pi_theta(.|s)}[psi_hat(s, .)]``.

    With ``w = d^pi`` frozen this is the policy-gradient form of the chain
    rule: ``w(s) pi(a|s) (psi_hat(s, a) - E_pi[psi_hat(s, .)])``.
    """
    psi_hat = as_float_array(psi_hat, "psi_hat", ndim=2)
    pi = softmax_rows(logits)
    if psi_hat.shape != pi.shape:
        raise DomainError("psi_hat and logits differ in shape")
    w = np.asarray(state_weights, dtype=np.float64)
    baseline = np.sum(pi * psi_hat, axis=1, keepdims=True)
    return w[:, None] * pi * (psi_hat - baseline)


def rl_score_function_grad(psi_hat, logits, state_weights, rng, samples, return_stderr=False):
    """Monte Carlo estimate of :func:`rl_chain_rule_grad`.

    Draws ``s ~ w`` and ``a ~ pi(.|s)``; each draw contributes
    ``psi_hat(s, a) (e_a - pi(.|s))`` to row ``s``.
    """
    samples = check_positive_int(samples, "samples")
    psi_hat = as_float_array(psi_hat, "psi_hat", ndim=2)
    pi = softmax_rows(logits)
    if psi_hat.shape != pi.shape:
        raise DomainError("psi_hat and logits differ in shape")
    w = check_prob_vector(state_weights, "state_weights")
    rng = make_rng(rng)
    S, A = pi.shape
    s = np.minimum(np.searchsorted(np.cumsum(w), rng.random(samples), side="right"), S - 1)
    cdf = np.cumsum(pi, axis=1)
    a = np.minimum((rng.random(samples)[:, None] >= cdf[s]).sum(axis=1), A - 1)
    per_draw = np.zeros((samples, S, A))
    rows = np.arange(samples)
    per_draw[rows, s, :] = -psi_hat[s, a][:, None] * pi[s]
    per_draw[rows, s, a] += psi_hat[s, a]
    mean = per_draw.mean(axis=0)
    if not return_stderr:
        return mean
    if samples == 1:
        return mean, np.full_like(mean, np.inf)
    return mean, per_draw.std(axis=0, ddof=1) / np.sqrt(samples)


def conditional_from_joint(joint):
    """Split a joint state-action table into ``(marginal, pi(a|s))``.

    States without mass get the uniform conditional.
    """
    joint = as_float_array(joint, "joint", ndim=2)
    marginal = joint.sum(axis=1)
    policy = np.full(joint.shape, 1.0 / joint.shape[1])
    seen = marginal > 0
    policy[seen] = joint[seen] / marginal[seen, None]
    return marginal, policy


def rl_functional(mdp):
    """``J_RL`` as a functional of a flattened joint state-action measure.

    Only the conditional ``mu(a|s)`` matters for the value.  The influence
    function uses the measure's own state marginal as reference, which
    reduces to the scaled negative advantage when ``mu`` is the occupancy.
    """

    def split(mu):
        mu = check_prob_vector(mu, "mu")
        if mu.size != mdp.S * mdp.A:
            raise DomainError(f"joint measure needs {mdp.S * mdp.A} entries")
        return conditional_from_joint(mu.reshape(mdp.S, mdp.A))

    def value(mu):
        return j_rl(mdp, split(mu)[1])

    def influence(mu):
        marginal, policy = split(mu)
        return rl_influence(mdp, policy, reference=marginal).ravel()

    return Functional("rl", value=value, influence=influence, context={"mdp": mdp})


def greedy_policy(Q):
    """Deterministic argmax policy; ties go to the lowest action index."""
    Q = as_float_array(Q, "Q", ndim=2)
    if not np.all(np.isfinite(Q)):
        raise DomainError("Q must be finite")
    policy = np.zeros_like(Q)
    policy[np.arange(Q.shape[0]), np.argmax(Q, axis=1)] = 1.0
    return policy


def bellman_apply(mdp, V):
    """``(A V)(s, a) = R(s, a) + gamma E[V(s')] - V(s)``."""
    V = as_float_array(V, "V")
    if V.size != mdp.S:
        raise DomainError("V must have one entry per state")
    if not np.all(np.isfinite(V)):
        raise DomainError("V must be finite")
    return mdp.R + mdp.gamma * (mdp.P @ V) - V[:, None]


def dac_objective(mdp, joint, V):
    """Lagrangian ``(1 - gamma) E_p0[V] + E_joint[A V]``.

    For a joint table satisfying the Bellman flow equation the ``V`` terms
    cancel and the value is ``E_joint[R] = -(1 - gamma) J_RL``.
    """
    joint = as_float_array(joint, "joint", ndim=2)
    if joint.shape != (mdp.S, mdp.A):
        raise DomainError(f"joint must have shape {(mdp.S, mdp.A)}")
    check_prob_vector(joint.ravel(), "joint")
    AV = bellman_apply(mdp, V)
    return (1.0 - mdp.gamma) * math.fsum(mdp.p0 * V) + math.fsum((joint * AV).ravel())


def policy_iteration(mdp, policy=None, max_iter=None):
    """Howard policy iteration with lowest-index greedy ties.

    Switching between exactly tied actions leaves ``V`` unchanged, so the
    greedy map then returns the same policy and the loop cannot cycle.

    Returns
    -------
    policy : ndarray
        The fixed point (a deterministic policy).
    V : ndarray
        Its value.
    history : list of ndarray
        Every iterate, starting with the initial policy.
    """
    policy = uniform_policy(mdp.S, mdp.A) if policy is None else mdp.check_policy(policy)
    limit = mdp.A**mdp.S + 1 if max_iter is None else max_iter
    history = [policy]
    for _ in range(limit):
        V, Q = policy_eval(mdp, policy)
        new = greedy_policy(Q)
        if np.array_equal(new, policy):
            return policy, V, history
        policy = new
        history.append(policy)
    raise NumericalError("policy iteration did not reach a fixed point")


# --------------------------------------------------------------------------
# text format: "S A gamma", p0 row, then S*A rows "s a R P(0|s,a) ... P(S-1|s,a)"
# --------------------------------------------------------------------------


def format_mdp(mdp):
    lines = [f"{mdp.S} {mdp.A} {mdp.gamma!r}", " ".join(repr(float(x)) for x in mdp.p0)]
    for s in range(mdp.S):
        for a in range(mdp.A):
            row = [str(s), str(a), repr(float(mdp.R[s, a]))]
            row.extend(repr(float(x)) for x in mdp.P[s, a])
            lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


def parse_mdp(text, source="<string>"):
    """Parse the plain-text table format; errors name the offending line."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows:
        raise DomainError(f"{source}: empty MDP file")

    def numbers(lineno, fields, kind=float):
        try:
            return [kind(f) for f in fields]
        except ValueError as exc:
            raise DomainError(f"{source}:{lineno}: {exc}") from None

    lineno, head = rows[0]
    if len(head) != 3:
        raise DomainError(f"{source}:{lineno}: header must read 'S A gamma'")
    S, A = numbers(lineno, head[:2], int)
    (gamma,) = numbers(lineno, head[2:])
    if S < 1 or A < 1:
        raise DomainError(f"{source}:{lineno}: S and A must be positive")
    if len(rows) != 2 + S * A:
        raise DomainError(f"{source}: expected {2 + S * A} data lines, found {len(rows)}")
    lineno, fields = rows[1]
    if len(fields) != S:
        raise DomainError(f"{source}:{lineno}: p0 row needs {S} entries")
    p0 = np.array(numbers(lineno, fields))
    P = np.full((S, A, S), np.nan)
    R = np.full((S, A), np.nan)
    for lineno, fields in rows[2:]:
        if len(fields) != 3 + S:
            raise DomainError(f"{source}:{lineno}: transition row needs {3 + S} entries")
        s, a = numbers(lineno, fields[:2], int)
        if not (0 <= s < S and 0 <= a < A):
            raise DomainError(f"{source}:{lineno}: pair ({s}, {a}) out of range")
        if not np.isnan(R[s, a]):
            raise DomainError(f"{source}:{lineno}: pair ({s}, {a}) given twice")
        vals = numbers(lineno, fields[2:])
        R[s, a] = vals[0]
        P[s, a] = vals[1:]
    try:
        return TabularMdp(p0=p0, P=P, R=R, gamma=gamma)
    except DomainError as exc:
        raise DomainError(f"{source}: {exc}") from None


def load_mdp(path):
    with open(path, encoding="utf-8") as fh:
        return parse_mdp(fh.read(), source=str(path))


def save_mdp(mdp, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_mdp(mdp))
