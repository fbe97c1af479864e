"""Weighted directed graphs, the reference random walk and node margins.

Nodes are numbered ``1..n`` at the public boundary (edge lists, files) and
``0..n-1`` inside arrays.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from .errors import (
    DuplicateEdge,
    InputError,
    MarginRenormalizedWarning,
    NegativeCost,
    NegativeEntry,
    NonPositiveAffinity,
    NonRegularChain,
    NotStronglyConnected,
    SumNotOne,
)

#: Condition-number ceiling for the bordered generator system.
MAX_CONDITION = 1e12
#: Margins within this distance of summing to one are silently renormalized.
MARGIN_SUM_TOL = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightedDigraph:
    """Strongly connected directed graph with edge affinities and costs.

    Attributes
    ----------
    n : int
        Number of nodes.
    src, dst : ndarray of int
        Zero-based endpoints of each edge.
    affinity : ndarray
        Positive edge weights ``a_ij``.
    cost : ndarray
        Finite nonnegative edge costs ``c_ij``.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    affinity: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.intp)
        dst = np.asarray(self.dst, dtype=np.intp)
        aff = np.asarray(self.affinity, dtype=float)
        cost = np.asarray(self.cost, dtype=float)
        if not (src.shape == dst.shape == aff.shape == cost.shape) or src.ndim != 1:
            raise InputError("edge arrays must be one-dimensional and of equal length")
        if src.size == 0:
            raise InputError("a graph needs at least one edge")
        if src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= self.n:
            raise InputError(f"node ids must lie in 1..{self.n}")
        if not np.all(np.isfinite(aff)) or np.any(aff <= 0):
            raise NonPositiveAffinity("edge affinities must be finite and > 0")
        if not np.all(np.isfinite(cost)):
            raise NegativeCost("edge costs must be finite")
        if np.any(cost < 0):
            raise NegativeCost("edge costs must be nonnegative")
        keys = src * self.n + dst
        uniq, counts = np.unique(keys, return_counts=True)
        if np.any(counts > 1):
            k = int(uniq[counts > 1][0])
            raise DuplicateEdge(f"duplicate edge ({k // self.n + 1}, {k % self.n + 1})")
        for name, arr in (("src", src), ("dst", dst)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "affinity", _frozen(aff))
        object.__setattr__(self, "cost", _frozen(cost))
        if not _strongly_connected(self.n, src, dst):
            raise NotStronglyConnected("graph is not strongly connected")

    @property
    def n_edges(self):
        return int(self.src.size)

    def adjacency(self):
        """Dense weighted adjacency matrix ``A``."""
        A = np.zeros((self.n, self.n))
        A[self.src, self.dst] = self.affinity
        return A

    def cost_matrix(self, off_edge=0.0):
        """Dense cost matrix ``C``; entries without an edge hold `off_edge`."""
        C = np.full((self.n, self.n), off_edge, dtype=float)
        C[self.src, self.dst] = self.cost
        return C

    def edge_mask(self):
        M = np.zeros((self.n, self.n), dtype=bool)
        M[self.src, self.dst] = True
        return M

    def edge_list(self):
        """Edges as ``(i, j, affinity, cost)`` tuples with one-based ids."""
        return [(int(i) + 1, int(j) + 1, float(a), float(c))
                for i, j, a, c in zip(self.src, self.dst, self.affinity, self.cost)]

    @classmethod
    def from_dense(cls, A, C=None, cost_from_affinity=False):
        """Build a graph from a dense adjacency matrix (and optional costs)."""
        A = np.asarray(A, dtype=float)
        src, dst = np.nonzero(A)
        if C is None:
            if not cost_from_affinity:
                raise InputError("either C or cost_from_affinity=True is required")
            cost = 1.0 / A[src, dst]
        else:
            cost = np.asarray(C, dtype=float)[src, dst]
        return cls(A.shape[0], src, dst, A[src, dst], cost)


def _strongly_connected(n, src, dst):
    adj = sp.csr_matrix((np.ones(src.size), (src, dst)), shape=(n, n))
    fwd = breadth_first_order(adj, 0, directed=True, return_predecessors=False)
    if fwd.size != n:
        return False
    bwd = breadth_first_order(adj.T.tocsr(), 0, directed=True, return_predecessors=False)
    return bwd.size == n


def build_graph(edge_list, n=None, cost_from_affinity=False):
    """Validate an edge list and return a :class:`WeightedDigraph`.

    Parameters
    ----------
    edge_list : iterable of tuple
        ``(i, j, affinity, cost)`` with one-based node ids. With
        ``cost_from_affinity=True`` the tuples may be ``(i, j, affinity)`` and
        costs are set to ``1 / affinity``.
    n : int, optional
        Node count; defaults to the largest id present.

    Examples
    --------
    >>> g = build_graph([(1, 2, 1, 1), (2, 1, 1, 1)])
    >>> g.n, g.n_edges
    (2, 2)
    """
    rows = [tuple(e) for e in edge_list]
    if not rows:
        raise InputError("a graph needs at least one edge")
    src = np.array([int(r[0]) for r in rows]) - 1
    dst = np.array([int(r[1]) for r in rows]) - 1
    aff = np.array([float(r[2]) for r in rows])
    if cost_from_affinity:
        with np.errstate(divide="ignore"):
            cost = 1.0 / aff
    else:
        if any(len(r) < 4 for r in rows):
            raise InputError("edges need a cost unless cost_from_affinity is set")
        cost = np.array([float(r[3]) for r in rows])
    if src.min() < 0 or dst.min() < 0:
        raise InputError("node ids are one-based")
    if n is None:
        n = int(max(src.max(), dst.max())) + 1
    return WeightedDigraph(int(n), src, dst, aff, cost)


def make_lattice(rows, cols, cost=1.0):
    """Four-neighbour grid with bidirectional unit-affinity edges.

    Node ``r * cols + c + 1`` sits at row ``r``, column ``c``.
    """
    if rows < 2 or cols < 2:
        raise InputError("a lattice needs rows >= 2 and cols >= 2")
    idx = np.arange(rows * cols).reshape(rows, cols)
    right = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
    down = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
    und = np.concatenate([right, down], axis=1)
    src = np.concatenate([und[0], und[1]])
    dst = np.concatenate([und[1], und[0]])
    m = src.size
    return WeightedDigraph(rows * cols, src, dst, np.ones(m), np.full(m, float(cost)))


def make_random_graph(n, seed=None, p=0.3, unit_costs=False, symmetric=False,
                      affinity_range=(0.5, 2.0), cost_range=(0.5, 2.0)):
    """Random strongly connected digraph.

    A random Hamiltonian cycle guarantees strong connectivity; every other
    ordered pair becomes an edge with probability `p`. With
    ``symmetric=True`` each edge gets its reverse with the same weights.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    mask = np.zeros((n, n), dtype=bool)
    mask[order, np.roll(order, -1)] = True
    mask |= rng.random((n, n)) < p
    np.fill_diagonal(mask, False)
    A = rng.uniform(*affinity_range, size=(n, n))
    C = np.ones((n, n)) if unit_costs else rng.uniform(*cost_range, size=(n, n))
    if symmetric:
        mask = mask | mask.T
        A = np.triu(A) + np.triu(A, 1).T
        C = np.triu(C) + np.triu(C, 1).T
    return WeightedDigraph.from_dense(np.where(mask, A, 0.0), np.where(mask, C, 0.0))


@dataclass(frozen=True, eq=False)
class ReferenceChain:
    """Natural random walk ``P_ref = D^-1 A`` and its stationary vector."""

    P_ref: np.ndarray
    pi_ref: np.ndarray
    period: int = 1
    # LU of the bordered generator, reused for the pseudoinverse solve
    _lu: tuple = field(default=None, repr=False)

    @property
    def n(self):
        return self.P_ref.shape[0]

    @property
    def is_aperiodic(self):
        return self.period == 1


def _chain_period(g):
    order, pred = breadth_first_order(
        sp.csr_matrix((np.ones(g.n_edges), (g.src, g.dst)), shape=(g.n, g.n)),
        0, directed=True, return_predecessors=True)
    level = np.zeros(g.n, dtype=np.int64)
    for v in order[1:]:
        level[v] = level[pred[v]] + 1
    diffs = np.abs(level[g.src] + 1 - level[g.dst])
    return int(reduce(math.gcd, diffs.tolist(), 0))


def transition_matrix(g):
    """``P_ref = D^-1 A`` as a dense array."""
    A = g.adjacency()
    return A / A.sum(axis=1, keepdims=True)


def factor_generator(P):
    """LU of ``I - P^T`` with its last row replaced by ``e^T``.

    The last equation of ``(I - P^T) x = b`` is implied by the others
    whenever ``e^T b = 0``, so this one factorization yields both the
    stationary vector (right-hand side ``e_n``) and particular solutions
    normalized by ``e^T x = 0``.

    Returns
    -------
    (lu, piv, cond) : tuple
        ``cond`` is the reciprocal of LAPACK's 1-norm condition estimate.
    """
    n = P.shape[0]
    B = np.eye(n) - P.T
    B[-1, :] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(B, check_finite=False)
    rcond, info = scipy.linalg.lapack.dgecon(lu, np.abs(B).sum(axis=0).max(), norm="1")
    cond = 1.0 / rcond if rcond > 0 and info == 0 else np.inf
    return lu, piv, cond


def _stationary_power(P, tol=1e-15, max_iter=1_000_000):
    # lazy chain (I + P)/2 has the same stationary vector and is aperiodic
    n = P.shape[0]
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        x_new = 0.5 * (x + x @ P)
        x_new /= x_new.sum()
        if np.abs(x_new - x).max() < tol:
            return x_new
        x = x_new
    raise NonRegularChain("power iteration for the stationary vector did not converge")


def reference_transitions(g):
    """Row-normalize the adjacency and compute the stationary distribution.

    The stationary vector solves the bordered system of
    :func:`factor_generator`; power iteration on the lazy chain is the
    fallback when that system is ill-conditioned.

    Periodic chains (e.g. bipartite graphs) still have a unique stationary
    vector on a strongly connected graph; they are accepted and flagged
    through :attr:`ReferenceChain.period`.

    Raises
    ------
    NonRegularChain
        When the bordered system is exactly singular (the stationary vector
        is not unique).
    """
    P = transition_matrix(g)
    n = g.n
    lu, piv, cond = factor_generator(P)
    if not np.isfinite(cond) or cond * np.finfo(float).eps >= 1.0:
        raise NonRegularChain("stationary distribution is not unique")
    pi = None
    if cond <= MAX_CONDITION:
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        pi = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
        if pi.min() < -1e-12:
            pi = None
    if pi is None:
        pi = _stationary_power(P)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    P.setflags(write=False)
    pi.setflags(write=False)
    return ReferenceChain(P, pi, _chain_period(g), (lu, piv, cond))


@dataclass(frozen=True, eq=False)
class MarginPair:
    """Starting (``sigma_in``) and ending (``sigma_out``) node distributions."""

    sigma_in: np.ndarray
    sigma_out: np.ndarray

    @property
    def n(self):
        return self.sigma_in.size

    @property
    def sources(self):
        return np.flatnonzero(self.sigma_in > 0)

    @property
    def targets(self):
        return np.flatnonzero(self.sigma_out > 0)


def _check_distribution(name, v, renormalize):
    if not np.all(np.isfinite(v)):
        raise InputError(f"{name} has non-finite entries")
    if np.any(v < 0):
        raise NegativeEntry(f"{name} has negative entries")
    s = v.sum()
    if s <= 0:
        raise SumNotOne(f"{name} sums to {s}")
    dev = abs(s - 1.0)
    if dev > MARGIN_SUM_TOL:
        if not renormalize:
            raise SumNotOne(f"{name} sums to {s!r}, not 1")
        warnings.warn(f"{name} summed to {s!r}; renormalized", MarginRenormalizedWarning,
                      stacklevel=3)
    elif dev > 1e-12:
        warnings.warn(f"{name} summed to {s!r}; renormalized", MarginRenormalizedWarning,
                      stacklevel=3)
    return _frozen(v / s)


def validate_margins(g, sigma_in, sigma_out, renormalize=False):
    """Check both margins and return a :class:`MarginPair`.

    Sums off by at most 1e-9 are renormalized (with a warning above 1e-12);
    larger deviations raise :class:`SumNotOne` unless `renormalize` is set.
    `g` may be a graph or a node count.
    """
    n = g if isinstance(g, (int, np.integer)) else g.n
    a = np.asarray(sigma_in, dtype=float).ravel()
    b = np.asarray(sigma_out, dtype=float).ravel()
    if a.size != n or b.size != n:
        raise InputError(f"margins must have length {n}")
    return MarginPair(_check_distribution("sigma_in", a, renormalize),
                      _check_distribution("sigma_out", b, renormalize))


def delta_margins(n, i, j):
    """Unit mass on node `i` (start) and node `j` (end); zero-based ids."""
    a = np.zeros(n)
    b = np.zeros(n)
    a[i] = 1.0
    b[j] = 1.0
    return MarginPair(_frozen(a), _frozen(b))
