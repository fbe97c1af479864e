"""Exact optimal transport on graphs and brute-force reference computations.

These routines serve as ground truth for the entropic solvers: the
zero-temperature transport cost, and truncated sums over explicit paths.
"""
from dataclasses import dataclass
from fractions import Fraction
from math import lcm

import numpy as np
import scipy.optimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import Infeasible, InputError, NoConvergence, TooLarge
from .graph import transition_matrix, validate_margins

MAX_DENOMINATOR = 10**9
MAX_BRUTE_NODES = 6
MAX_BRUTE_LENGTH = 25


def shortest_path_costs(g):
    """All-pairs directed least-cost matrix of `g` (diagonal 0)."""
    A = csr_matrix((g.cost, (g.src, g.dst)), shape=(g.n, g.n))
    return dijkstra(A, directed=True)


@dataclass(frozen=True, eq=False)
class ExactFlowSolution:
    """Optimal flow of unit mass from ``sigma_in`` to ``sigma_out``.

    Attributes
    ----------
    flows : ndarray (n, n)
        Edge flows ``X``, supported on edges.
    total_cost : float
        ``sum(X o C)``.
    dual_prices : ndarray (n,)
        Node prices ``p`` with ``p_i - p_j <= c_ij`` on edges and
        ``p . (sigma_in - sigma_out) = total_cost`` at optimality.
    denominator : int
        Common denominator the margins were scaled by.
    margin_error : float
        Largest deviation between scaled integer supplies and the float margins.
    augmentations : int
    supplies : ndarray (n,)
        Net supplies actually routed, ``b / denominator``.
    """

    flows: np.ndarray
    total_cost: float
    dual_prices: np.ndarray
    denominator: int
    margin_error: float
    augmentations: int
    supplies: np.ndarray = None

    @property
    def lambda_in(self):
        return self.dual_prices

    @property
    def lambda_out(self):
        return -self.dual_prices

    def duality_gap(self, sigma_in=None, sigma_out=None):
        """``|total_cost - p . b|`` for the routed supplies, or for the given margins.

        Against the float margins the gap also contains the rounding reported
        by `margin_error`.
        """
        b = self.supplies if sigma_in is None else sigma_in - sigma_out
        return float(abs(self.total_cost - self.dual_prices @ b))


def integer_supplies(sigma_in, sigma_out, cap=MAX_DENOMINATOR):
    """Scale ``sigma_in - sigma_out`` to integers over a common denominator.

    Each entry is approximated by a fraction with denominator at most `cap`;
    when the least common denominator exceeds `cap`, `cap` itself is used and
    rounding surpluses are removed from the largest entries so that the
    supplies still sum to zero.

    Returns
    -------
    b : ndarray of int64
    D : int
    """
    values = np.concatenate([sigma_in, sigma_out])
    D = 1
    for v in values:
        D = lcm(D, Fraction(float(v)).limit_denominator(cap).denominator)
        if D > cap:
            D = cap
            break
    s_in = np.rint(sigma_in * D).astype(np.int64)
    s_out = np.rint(sigma_out * D).astype(np.int64)
    for s in (s_in, s_out):
        surplus = int(s.sum()) - D
        order = np.argsort(-s, kind="stable")
        k = 0
        while surplus != 0:
            step = 1 if surplus > 0 else -1
            idx = order[k % order.size]
            if s[idx] - step >= 0:
                s[idx] -= step
                surplus -= step
            k += 1
    return s_in - s_out, D


def exact_flow(g, margins):
    """Minimum-cost flow by successive shortest augmenting paths.

    Arcs are uncapacitated; residual reverse arcs carry the current flow.
    Each round runs one Dijkstra search over reduced costs from all nodes
    with remaining supply, augments along the path to the nearest node with
    remaining demand, and updates node potentials so reduced costs stay
    nonnegative.

    Returns
    -------
    ExactFlowSolution

    Raises
    ------
    Infeasible
        When a demand node cannot be reached from any supply node.
    """
    margins = validate_margins(g, margins.sigma_in, margins.sigma_out)
    n, m = g.n, g.n_edges
    b, D = integer_supplies(margins.sigma_in, margins.sigma_out)
    err = float(np.abs(b / D - (margins.sigma_in - margins.sigma_out)).max())
    excess = b.copy()
    x = np.zeros(m, dtype=np.int64)
    pot = np.zeros(n)
    src, dst, cost = g.src, g.dst, g.cost
    rounds = 0
    while np.any(excess > 0):
        rounds += 1
        on = np.flatnonzero(x > 0)
        u = np.concatenate([src, dst[on]])
        v = np.concatenate([dst, src[on]])
        rc = np.concatenate([cost + pot[src] - pot[dst], -cost[on] + pot[dst[on]] - pot[src[on]]])
        np.maximum(rc, 0.0, out=rc)
        arc = np.concatenate([np.arange(m), -1 - on])
        # keep the cheapest arc of each ordered pair
        key = u * n + v
        order = np.lexsort((rc, key))
        key, rc, arc = key[order], rc[order], arc[order]
        first = np.r_[True, key[1:] != key[:-1]]
        key, rc, arc = key[first], rc[first], arc[first]
        A = csr_matrix((rc, (key // n, key % n)), shape=(n, n))
        sources = np.flatnonzero(excess > 0)
        dist, pred, origin = dijkstra(A, indices=sources, min_only=True, return_predecessors=True)
        deficits = np.flatnonzero(excess < 0)
        reach = deficits[np.isfinite(dist[deficits])]
        if reach.size == 0:
            raise Infeasible("no augmenting path from a supply node to a demand node")
        t = reach[np.argmin(dist[reach])]
        s = origin[t]
        path = []
        w = t
        while w != s:
            p = pred[w]
            path.append(arc[np.searchsorted(key, p * n + w)])
            w = p
        path = np.asarray(path)
        back = path[path < 0]
        delta = min(excess[s], -excess[t])
        if back.size:
            delta = min(delta, int(x[-1 - back].min()))
        fwd = path[path >= 0]
        x[fwd] += delta
        x[-1 - back] -= delta
        excess[s] -= delta
        excess[t] += delta
        pot += np.minimum(dist, dist[t])
    flows = np.zeros((n, n))
    np.add.at(flows, (src, dst), x / D)
    total = float((x / D) @ cost)
    return ExactFlowSolution(flows, total, -pot, D, err, rounds, b / D)


def flow_certificate(g, sol, tol=1e-9):
    """Largest violation of reduced-cost optimality on residual arcs (0 if optimal)."""
    p = sol.dual_prices
    xe = sol.flows[g.src, g.dst]
    rc = g.cost - p[g.src] + p[g.dst]
    viol = max(0.0, -float(rc.min()))
    on = xe > tol
    if np.any(on):
        viol = max(viol, float(np.abs(rc[on]).max()))
    return viol


@dataclass(frozen=True, eq=False)
class ExactCoupling:
    """Optimal coupling of the transportation problem over a cost matrix."""

    coupling: np.ndarray
    cost: float
    lambda_in: np.ndarray
    lambda_out: np.ndarray

    def duality_gap(self, sigma_in, sigma_out):
        return float(abs(self.cost - self.lambda_in @ sigma_in - self.lambda_out @ sigma_out))

    def dual_violation(self, d):
        """``max(lambda_in_i + lambda_out_j - d_ij, 0)`` over all pairs."""
        return float(max(0.0, (self.lambda_in[:, None] + self.lambda_out[None, :] - d).max()))


def exact_coupling(margins, d):
    """Optimal transport plan between the margins for cost matrix `d`.

    Solved as a linear program (HiGHS) over source x target pairs. Dual
    prices of nodes outside the supports are set to the largest values
    keeping ``lambda_in_i + lambda_out_j <= d_ij`` for all pairs.
    """
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)):
        raise InputError("cost matrix must be finite")
    si, so = margins.sigma_in, margins.sigma_out
    n = si.size
    S, T = np.flatnonzero(si > 0), np.flatnonzero(so > 0)
    p, q = S.size, T.size
    rows = np.concatenate([np.repeat(np.arange(p), q), p + np.tile(np.arange(q), p)])
    cols = np.concatenate([np.arange(p * q), np.arange(p * q)])
    A = csr_matrix((np.ones(2 * p * q), (rows, cols)), shape=(p + q, p * q))
    res = scipy.optimize.linprog(d[np.ix_(S, T)].ravel(), A_eq=A, b_eq=np.r_[si[S], so[T]],
                                 bounds=(0, None), method="highs")
    if res.status != 0:
        raise Infeasible(f"transportation problem not solved: {res.message}")
    gamma = np.zeros((n, n))
    gamma[np.ix_(S, T)] = res.x.reshape(p, q)
    y = res.eqlin.marginals
    lam_in = np.full(n, np.nan)
    lam_out = np.full(n, np.nan)
    lam_in[S], lam_out[T] = y[:p], y[p:]
    rest_in = np.setdiff1d(np.arange(n), S)
    lam_in[rest_in] = (d[np.ix_(rest_in, T)] - lam_out[T]).min(axis=1)
    rest_out = np.setdiff1d(np.arange(n), T)
    lam_out[rest_out] = (d[:, rest_out] - lam_in[:, None]).min(axis=0)
    return ExactCoupling(gamma, float(res.fun), lam_in, lam_out)


# brute-force path sums

@dataclass(frozen=True, eq=False)
class PathSum:
    """Truncated path sum with an upper bound on every omitted entry."""

    Z: np.ndarray
    tail_bound: float
    max_len: int


def _weights(g, beta, mode, alpha):
    P = transition_matrix(g)
    if mode == "regular" and alpha is not None:
        P = (1.0 - np.asarray(alpha, float))[:, None] * P
    elif mode not in ("regular", "hitting"):
        raise InputError(f"unknown mode {mode!r}")
    return P * np.exp(-beta * g.cost_matrix())


def _tail(W, max_len):
    q = float(W.sum(axis=1).max())
    return q ** (max_len + 1) / (1.0 - q) if q < 1 else np.inf


def brute_force_fundamental(g, beta, mode="regular", max_len=20, alpha=None):
    """Sum of discounted reference-path weights over paths of length <= `max_len`.

    Regular mode sums all paths from ``i`` to ``j`` (with optional killing
    rates `alpha`). Hitting mode keeps only paths whose last node does not
    occur earlier, so the diagonal is exactly one. Sums are accumulated
    length by length, without factorizing anything.

    Raises
    ------
    TooLarge
        When ``n > 6`` or ``max_len > 25``.
    """
    if g.n > MAX_BRUTE_NODES or max_len > MAX_BRUTE_LENGTH:
        raise TooLarge(f"brute force limited to n <= {MAX_BRUTE_NODES}, "
                       f"max_len <= {MAX_BRUTE_LENGTH}")
    if max_len < 0:
        raise InputError("max_len must be >= 0")
    W = _weights(g, beta, mode, alpha)
    n = g.n
    if mode == "regular":
        Z = np.eye(n)
        term = np.eye(n)
        for _ in range(max_len):
            term = term @ W
            Z += term
    else:
        Z = np.zeros((n, n))
        for j in range(n):
            h = np.zeros(n)
            h[j] = 1.0
            col = h.copy()
            for _ in range(max_len):
                h = W @ h
                h[j] = 0.0
                col += h
            Z[:, j] = col
    return PathSum(Z, _tail(W, max_len), max_len)


def enumerate_paths(W, i, j, max_len, hitting=False):
    """List every path ``i -> j`` of length <= `max_len` with its weight.

    Parameters
    ----------
    W : ndarray
        Edge weights; zero entries are not edges.
    hitting : bool
        Keep only paths visiting `j` once, at the end.

    Returns
    -------
    list of (tuple, float)
    """
    if W.shape[0] > MAX_BRUTE_NODES or max_len > MAX_BRUTE_LENGTH:
        raise TooLarge("explicit enumeration is limited to tiny instances")
    succ = [np.flatnonzero(W[k]) for k in range(W.shape[0])]
    out = []
    stack = [((i,), 1.0)]
    while stack:
        path, w = stack.pop()
        last = path[-1]
        if last == j:
            out.append((path, w))
            if hitting:
                continue
        if len(path) - 1 == max_len:
            continue
        for k in succ[last]:
            stack.append((path + (int(k),), w * W[last, k]))
    return out


def dual_coupling(K, row_w, col_w, sigma_in, sigma_out, tol=1e-13):
    """Balance ``Diag(row_w) K Diag(col_w)`` by minimizing the convex dual.

    Independent of the alternating scaling used by the solvers: the smooth
    dual ``sum_ij e^{a_i} k_ij e^{b_j} - sigma_in.a - sigma_out.b`` over the
    margin supports, with the last ``b`` pinned to zero, is handed to a
    trust-region Newton minimizer with the exact Hessian.
    """
    S, T = np.flatnonzero(sigma_in > 0), np.flatnonzero(sigma_out > 0)
    Ks = (row_w[S, None] * K[np.ix_(S, T)] * col_w[None, T])
    r, s = sigma_in[S], sigma_out[T]
    p, q = S.size, T.size

    def split(z):
        return z[:p], np.append(z[p:], 0.0)

    def plan(z):
        a, b = split(z)
        return np.exp(a)[:, None] * Ks * np.exp(b)[None, :]

    def f(z):
        a, b = split(z)
        return plan(z).sum() - r @ a - s @ b

    def grad(z):
        G = plan(z)
        return np.concatenate([G.sum(axis=1) - r, (G.sum(axis=0) - s)[:-1]])

    def hess(z):
        G = plan(z)
        H = np.zeros((p + q - 1, p + q - 1))
        H[:p, :p] = np.diag(G.sum(axis=1))
        H[p:, p:] = np.diag(G.sum(axis=0)[:-1])
        H[:p, p:] = G[:, :-1]
        H[p:, :p] = G[:, :-1].T
        return H

    b0 = np.log(s) - np.log(Ks.sum(axis=0))
    z0 = np.concatenate([np.log(r), (b0 - b0[-1])[:-1]])
    res = scipy.optimize.minimize(f, z0, jac=grad, hess=hess, method="trust-exact",
                                  options={"gtol": tol, "maxiter": 10_000})
    a, b = split(res.x)
    G = np.exp(a)[:, None] * Ks * np.exp(b)[None, :]
    if np.abs(G.sum(axis=1) - r).max() > 1e-8:
        raise NoConvergence("dual minimization did not balance the kernel")
    gamma = np.zeros_like(K, dtype=float)
    gamma[np.ix_(S, T)] = G
    return gamma
