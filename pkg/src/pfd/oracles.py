"""Slow, independent reference computations used by the verification suite.

Nothing here shares a code path with the implementations it is used to
check: LPs are solved by enumerating bases, gradients by central
differences, MDP quantities by fixed-point iteration or truncated series.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .problems import random_mdp  # noqa: F401  re-exported for the checks

__all__ = [
    "fd_gradient",
    "lp_vertex_enumeration",
    "transport_lp_oracle",
    "js_conjugate_bruteforce",
    "random_mdp",
    "iterative_policy_eval",
    "occupancy_series",
    "value_iteration",
]


def fd_gradient(f, x, h=1e-5):
    """Central-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = grad.reshape(-1)
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = h
        e = e.reshape(x.shape)
        flat[k] = (f(x + e) - f(x - e)) / (2.0 * h)
    return grad


def lp_vertex_enumeration(c, A_eq, b_eq, tol=1e-12):
    """Minimise ``c @ x`` s.t. ``A_eq x = b_eq, x >= 0`` by visiting every basis.

    Redundant equality rows are dropped first.  Returns ``(value, x)``.
    """
    A = np.asarray(A_eq, dtype=np.float64)
    b = np.asarray(b_eq, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    rank = np.linalg.matrix_rank(A)
    rows = []
    for r in range(A.shape[0]):
        if np.linalg.matrix_rank(A[rows + [r]]) > len(rows):
            rows.append(r)
        if len(rows) == rank:
            break
    A, b = A[rows], b[rows]
    combos = np.array(list(itertools.combinations(range(A.shape[1]), rank)))
    B = np.transpose(A[:, combos], (1, 0, 2))
    ok = np.abs(np.linalg.det(B)) > 1e-12
    combos, B = combos[ok], B[ok]
    xb = np.linalg.solve(B, np.broadcast_to(b, (len(B), rank))[..., None])[..., 0]
    feasible = np.all(xb >= -tol, axis=1)
    best_val, best_x = math.inf, None
    for cols, sol in zip(combos[feasible], xb[feasible]):
        x = np.zeros(A.shape[1])
        x[cols] = np.clip(sol, 0.0, None)
        val = math.fsum(c * x)
        if val < best_val:
            best_val, best_x = val, x
    return best_val, best_x


def transport_lp_oracle(mu, nu, d):
    """W1 by brute-force vertex enumeration of the transportation polytope."""
    n = len(mu)
    A = np.zeros((2 * n, n * n))
    for i in range(n):
        A[i, i * n:(i + 1) * n] = 1.0
        A[n + i, i::n] = 1.0
    b = np.concatenate([mu, nu])
    val, x = lp_vertex_enumeration(np.asarray(d).ravel(), A, b)
    return val, x.reshape(n, n)


def js_conjugate_bruteforce(phi, nu, pmax=4.0, grid=400_001):
    """``sup_{p >= 0} <phi, p> - JS(p, nu)`` by coordinate-wise grid search.

    The JS integrand is separable over points, so the supremum over the
    non-negative cone factorises into one-dimensional maximisations.
    """
    p = np.linspace(0.0, pmax, grid)
    total = 0.0
    for f, q in zip(phi, nu):
        m = 0.5 * (p + q)
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(p > 0, p * np.log(p / m), 0.0)
            b = q * np.log(q / m) if q > 0 else np.zeros_like(p)
        total += float(np.max(f * p - 0.5 * a - 0.5 * b))
    return total


def iterative_policy_eval(mdp, policy, iters=10_000):
    V = np.zeros(mdp.S)
    P_pi = np.einsum("sa,sat->st", policy, mdp.P)
    R_pi = np.sum(policy * mdp.R, axis=1)
    for _ in range(iters):
        V = R_pi + mdp.gamma * P_pi @ V
    return V


def occupancy_series(mdp, policy, T):
    """``(1 - gamma) sum_{t < T} gamma^t p_t`` by propagating state marginals."""
    P_pi = np.einsum("sa,sat->st", policy, mdp.P)
    p = mdp.p0.copy()
    d = np.zeros(mdp.S)
    for t in range(T):
        d += (1 - mdp.gamma) * mdp.gamma**t * p
        p = p @ P_pi
    return d


def value_iteration(mdp, tol=1e-13, max_iter=100_000):
    """Optimal ``V*``, ``Q*`` and the lowest-index greedy policy."""
    V = np.zeros(mdp.S)
    for _ in range(max_iter):
        Q = mdp.R + mdp.gamma * mdp.P @ V
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            V = V_new
            break
        V = V_new
    Q = mdp.R + mdp.gamma * mdp.P @ V
    policy = np.zeros_like(Q)
    policy[np.arange(mdp.S), Q.argmax(axis=1)] = 1.0
    return V, Q, policy
