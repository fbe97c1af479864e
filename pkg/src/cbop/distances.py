"""Node distances and group dissimilarities built on the two path models."""
import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EmptyGroup, InputError, ZeroCouplingWarning
from .graph import MarginPair, reference_transitions, validate_margins
from .hitting import HittingKernel, solve_hitting
from .regular import solve_regular
from .solution import DEFAULT_MAX_ITER, DEFAULT_TOL

KINDS = ("surprisal-regular", "surprisal-hitting", "free-energy-pairwise",
         "group-FE-regular", "group-FE-hitting")
MODES = ("regular", "hitting")


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Square matrix of nonnegative dissimilarities.

    Attributes
    ----------
    values : ndarray
    kind : str
        One of :data:`KINDS`.
    metric_claimed : bool
        Whether the triangle inequality is expected to hold.
    has_infinite : bool
        Some entries are ``+inf`` because a coupling entry vanished.
    directed : ndarray, optional
        Directed free energies underlying a symmetrized group dissimilarity.
    """

    values: np.ndarray
    kind: str
    metric_claimed: bool
    has_infinite: bool = False
    directed: np.ndarray = None

    def triangle_violation(self, slack=1e-12):
        """Largest ``D_ij - D_ik - D_kj - slack`` over all triples (<= 0 when none)."""
        D = self.values
        worst = -np.inf
        for k in range(D.shape[0]):
            worst = max(worst, float((D - D[:, [k]] - D[[k], :]).max()) - slack)
        return worst


@dataclass(frozen=True, eq=False)
class GroupSpec:
    """Soft node-to-group memberships and node weights.

    Attributes
    ----------
    membership : ndarray (n, p)
        Nonnegative; every row sums to one, or is all zero for a node that
        belongs to no group.
    node_weights : ndarray (n,)
        Positive, summing to one.
    labels : tuple
        Group names, in column order.
    """

    membership: np.ndarray
    node_weights: np.ndarray
    labels: tuple = None

    def __post_init__(self):
        M = np.asarray(self.membership, dtype=float)
        w = np.asarray(self.node_weights, dtype=float)
        if M.ndim != 2 or M.shape[0] != w.size:
            raise InputError("membership must be n x p with n = len(node_weights)")
        if np.any(M < 0) or not np.all(np.isfinite(M)):
            raise InputError("memberships must be finite and nonnegative")
        rs = M.sum(axis=1)
        if np.any((rs > 0) & (np.abs(rs - 1) > 1e-9)):
            raise InputError("membership rows must sum to 1")
        if np.any(w <= 0) or abs(w.sum() - 1) > 1e-9:
            raise InputError("node weights must be positive and sum to 1")
        object.__setattr__(self, "membership", M)
        object.__setattr__(self, "node_weights", w / w.sum())
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(range(1, M.shape[1] + 1)))

    @property
    def n_groups(self):
        return self.membership.shape[1]

    def group_margins(self):
        """Rows ``sigma_g`` with ``sigma_g,i = w_i m_ig / sum_j w_j m_jg``.

        Raises
        ------
        EmptyGroup
            When a group has zero total weight.
        """
        Wm = self.node_weights[:, None] * self.membership
        tot = Wm.sum(axis=0)
        empty = np.flatnonzero(tot <= 0)
        if empty.size:
            raise EmptyGroup(f"group {self.labels[empty[0]]!r} has no members")
        return (Wm / tot).T


def free_energy_distance_matrix(g, beta, kernel=None):
    """Directed free energy ``phi_T(i, j) = -T log z^h_ij`` between all node pairs."""
    if kernel is None:
        kernel = HittingKernel.from_graph(g, beta)
    return DistanceMatrix(kernel.free_energy_distances(), "free-energy-pairwise", False)


def _solver(mode, g, beta, tol, max_iter):
    if mode == "hitting":
        kernel = HittingKernel.from_graph(g, beta)
        return lambda m: solve_hitting(g, m, beta, tol, max_iter, kernel=kernel)
    if mode == "regular":
        chain = reference_transitions(g)
        return lambda m: solve_regular(g, m, beta, tol=tol, max_iter=max_iter, chain=chain)
    raise InputError(f"mode must be one of {MODES}")


def surprisal_distance(g, w, beta, mode="hitting", tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Surprisal distance ``-(log gamma_ij + log gamma_ji) / 2``.

    The coupling comes from one solve with both margins equal to the node
    weights `w`, which must be strictly positive.
    """
    w = np.asarray(w, dtype=float)
    if w.size != g.n or np.any(w <= 0):
        raise InputError("surprisal distance needs strictly positive node weights")
    m = validate_margins(g, w, w)
    sol = _solver(mode, g, beta, tol, max_iter)(m)
    G = sol.gamma
    with np.errstate(divide="ignore"):
        L = np.log(G)
    D = -(L + L.T) / 2
    np.fill_diagonal(D, 0.0)
    inf = bool(np.any(np.isinf(D)))
    if inf:
        warnings.warn("zero coupling entries give infinite distances", ZeroCouplingWarning,
                      stacklevel=2)
    return DistanceMatrix(D, f"surprisal-{mode}", True, inf)


def group_dissimilarity(g, groups, beta, mode="hitting", tol=DEFAULT_TOL,
                        max_iter=DEFAULT_MAX_ITER):
    """Symmetrized minimum free energy between group margins.

    Hitting mode shares one factorization across all group pairs; regular
    mode rebuilds the killed walk for every ordered pair, since the killing
    rates depend on the margins.
    """
    sig = groups.group_margins()
    p = sig.shape[0]
    solve = _solver(mode, g, beta, tol, max_iter)
    F = np.zeros((p, p))
    for a, b in itertools.permutations(range(p), 2):
        F[a, b] = solve(MarginPair(sig[a], sig[b])).fe_min
    D = (F + F.T) / 2
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(D, f"group-FE-{mode}", False, directed=F)
