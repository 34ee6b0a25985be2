"""Wasserstein-1 on a finite metric space.

The primal transportation problem is solved exactly with the transportation
simplex method (least-cost start, MODI potentials, Bland's rule on
degenerate pivots).  The Kantorovich potential is read off the final dual
variables and made 1-Lipschitz by a c-transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import nnls

from ._validation import (
    DomainError,
    NumericalError,
    as_float_array,
    check_prob_vector,
    check_same_shape,
)
from .functional import Functional
from .space import make_rng

__all__ = [
    "MetricSpace",
    "W1Result",
    "w1_solve",
    "w1_value",
    "c_transform",
    "lipschitz_projection",
    "lipschitz_constant",
    "w1_functional",
]

@dataclass(frozen=True)
class MetricSpace:
    """``n`` points with a symmetric distance table obeying the triangle inequality."""

    d: np.ndarray

    def __post_init__(self):
        d = as_float_array(self.d, "d", ndim=2)
        n = d.shape[0]
        if d.shape != (n, n):
            raise DomainError(f"distance table must be square, got {d.shape}")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise DomainError("distances must be finite and non-negative")
        if np.any(np.diag(d) != 0):
            raise DomainError("distance table must have a zero diagonal")
        if not np.allclose(d, d.T, rtol=0, atol=1e-12):
            raise DomainError("distance table must be symmetric")
        # d[i, j] <= d[i, k] + d[k, j] for every k
        via = (d[:, :, None] + d[None, :, :]).min(axis=1)
        if np.any(d > via + 1e-12):
            i, j = np.argwhere(d > via + 1e-12)[0]
            raise DomainError(f"triangle inequality fails for pair ({i}, {j})")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def n(self):
        return self.d.shape[0]

    @classmethod
    def line(cls, n):
        x = np.arange(n, dtype=np.float64)
        return cls(np.abs(x[:, None] - x[None, :]))

    @classmethod
    def from_points(cls, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        diff = pts[:, None, :] - pts[None, :, :]
        return cls(np.sqrt(np.sum(diff**2, axis=-1)))

    @classmethod
    def random(cls, rng, n, dim=2):
        """Euclidean distances between ``n`` uniform points in the unit cube."""
        return cls.from_points(make_rng(rng).random((n, dim)))


class W1Result(NamedTuple):
    value: float
    plan: np.ndarray
    potential: np.ndarray


def _least_cost_start(a, b, cost):
    """Least-cost (matrix minimum) initial basic feasible solution.

    When a row and a column run out together only the row is retired, so
    the basis always has ``m + n - 1`` cells forming a spanning tree.
    """
    m, n = a.size, b.size
    a = a.copy()
    b = b.copy()
    x = np.zeros((m, n))
    basis = []
    rows_live = np.ones(m, dtype=bool)
    cols_live = np.ones(n, dtype=bool)
    order = np.lexsort((np.arange(m * n), cost.ravel()))
    for flat in order:
        i, j = divmod(int(flat), n)
        if not (rows_live[i] and cols_live[j]):
            continue
        q = min(a[i], b[j])
        x[i, j] = q
        basis.append((i, j))
        a[i] -= q
        b[j] -= q
        if len(basis) == m + n - 1:
            break
        if a[i] <= b[j] and rows_live.sum() > 1:
            rows_live[i] = False
        else:
            cols_live[j] = False
    return x, basis


def _tree_adjacency(basis, m):
    # row node r -> r, column node c -> m + c
    adj = {}
    for i, j in basis:
        adj.setdefault(i, []).append(m + j)
        adj.setdefault(m + j, []).append(i)
    return adj


def _dual_potentials(cost, adj, m, n):
    u = [None] * m
    v = [None] * n
    u[0] = 0.0
    stack = [0]
    while stack:
        node = stack.pop()
        for other in adj.get(node, ()):
            if node < m:
                j = other - m
                if v[j] is None:
                    v[j] = cost[node, j] - u[node]
                    stack.append(other)
            else:
                if u[other] is None:
                    u[other] = cost[other, node - m] - v[node - m]
                    stack.append(other)
    if None in u or None in v:
        raise NumericalError("transportation basis is not a spanning tree")
    return np.array(u), np.array(v)


def _tree_path(adj, m, start, goal):
    """Cells on the basis-tree path from node ``start`` to node ``goal``."""
    parent = {start: None}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == goal:
            break
        for other in adj.get(node, ()):
            if other not in parent:
                parent[other] = node
                stack.append(other)
    path = []
    node = goal
    while parent[node] is not None:
        prev = parent[node]
        path.append((prev, node - m) if prev < m else (node, prev - m))
        node = prev
    path.reverse()
    return path


def _transport_simplex(a, b, cost, max_iter=100_000):
    """Primal transportation simplex.

    Entering cells follow Dantzig's most-negative rule until a pivot is
    degenerate; from then on Bland's lowest-index rule is used for entering
    and leaving cells until the next non-degenerate pivot.  A run of
    degenerate pivots is therefore pure Bland and cannot cycle, and every
    non-degenerate pivot strictly lowers the cost.
    """
    m, n = a.size, b.size
    x, basis = _least_cost_start(a, b, cost)
    tol = 1e-12 * max(1.0, float(cost.max()))
    bland = False
    for _ in range(max_iter):
        adj = _tree_adjacency(basis, m)
        u, v = _dual_potentials(cost, adj, m, n)
        reduced = cost - u[:, None] - v[None, :]
        for cell in basis:
            reduced[cell] = 0.0
        flat = reduced.ravel()
        candidates = np.flatnonzero(flat < -tol)
        if candidates.size == 0:
            return x, u, v
        if bland:
            entering = int(candidates[0])
        else:
            entering = int(candidates[np.argmin(flat[candidates])])
        ei, ej = divmod(entering, n)
        # path from column ej back to row ei; signs alternate -, +, -, ...
        path = _tree_path(adj, m, m + ej, ei)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(x[c] for c in minus)
        leaving = min((c for c in minus if x[c] == theta), key=lambda c: c[0] * n + c[1])
        for c in minus:
            x[c] -= theta
        for c in plus:
            x[c] += theta
        x[ei, ej] += theta
        x[leaving] = 0.0
        basis.remove(leaving)
        basis.append((ei, ej))
        bland = theta == 0.0
    raise NumericalError("transportation simplex did not terminate")


def c_transform(phi, m):
    """``x -> min_y phi(y) + d(x, y)``: the largest 1-Lipschitz minorant of ``phi``."""
    phi = as_float_array(phi, "phi")
    if phi.size != m.n:
        raise DomainError("phi and the metric space differ in size")
    return (phi[None, :] + m.d).min(axis=1)


def lipschitz_projection(psi, m):
    """Euclidean projection of ``psi`` onto ``{phi : phi_i - phi_j <= d_ij}``.

    Solved as a least-distance problem through non-negative least squares
    (Lawson and Hanson, ch. 23), which is exact up to rounding.
    """
    psi = as_float_array(psi, "psi")
    n = psi.size
    if n != m.n:
        raise DomainError("psi and the metric space differ in size")
    I, J = np.nonzero(~np.eye(n, dtype=bool))
    # with phi = psi + x the constraints read x_j - x_i >= psi_i - psi_j - d_ij
    h = psi[I] - psi[J] - m.d[I, J]
    if np.all(h <= 0):
        return psi.copy()
    G = np.zeros((I.size, n))
    rows = np.arange(I.size)
    G[rows, J] = 1.0
    G[rows, I] = -1.0
    E = np.vstack([G.T, h[None, :]])
    f = np.zeros(n + 1)
    f[-1] = 1.0
    u, _ = nnls(E, f, maxiter=50 * I.size)
    r = E @ u - f
    if abs(r[-1]) < 1e-300:
        raise NumericalError("Lipschitz projection failed")
    return psi - r[:n] / r[n]


def lipschitz_constant(phi, m):
    phi = as_float_array(phi, "phi")
    diff = np.abs(phi[:, None] - phi[None, :])
    off = ~np.eye(m.n, dtype=bool)
    zero = off & (m.d == 0)
    if np.any(diff[zero] > 0):
        return math.inf
    pos = off & (m.d > 0)
    if not pos.any():
        return 0.0
    return float((diff[pos] / m.d[pos]).max())


def w1_solve(mu, nu, m):
    """Exact ``W1(mu, nu)`` with an optimal plan and Kantorovich potential.

    The potential ``phi`` satisfies ``<phi, mu> - <phi, nu> = value``, is
    1-Lipschitz, and is normalised to ``phi[0] = 0``.
    """
    mu = check_prob_vector(mu, "mu")
    nu = check_prob_vector(nu, "nu")
    check_same_shape(mu, nu)
    if not isinstance(m, MetricSpace):
        m = MetricSpace(m)
    if m.n != mu.size:
        raise DomainError("measures and metric space differ in size")
    plan, _, v = _transport_simplex(mu, nu, m.d)
    # phi_i = min_j d_ij - v_j dominates u and is 1-Lipschitz, hence optimal
    phi = (m.d - v[None, :]).min(axis=1)
    phi -= phi[0]
    value = math.fsum((plan * m.d).ravel())
    return W1Result(value, plan, phi)


def w1_value(mu, nu, m):
    return w1_solve(mu, nu, m).value


def w1_functional(nu, m):
    nu = check_prob_vector(nu, "nu")
    return Functional(
        "w1",
        value=lambda mu: w1_solve(mu, nu, m).value,
        influence=lambda mu: w1_solve(mu, nu, m).potential,
        context={"nu": nu, "metric": m},
    )
