"""Margin-constrained bag of hitting paths.

A hitting path stops the first time it reaches its ending node, so no
killing of the reference walk is needed. The fundamental matrix depends
only on the graph and ``beta`` and is shared by every margin pair.
"""
from dataclasses import dataclass
from functools import cached_property
from time import perf_counter

import numpy as np

from .errors import NumericalBreakdown
from .graph import transition_matrix, validate_margins
from .solution import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    Fundamental,
    TransportSolution,
    balance,
    discounted_weights,
    free_energy_from_coupling,
    free_energy_from_scaling,
    policy_from_flows,
)

# negative edge flows larger than this (relative to the cancelling terms) are errors
NEGATIVE_FLOW_TOL = 1e-12


class HittingKernel:
    """``W``, ``Z = (I - W)^-1`` and ``Z_h = Z Diag(Z)^-1`` for one (graph, beta).

    Immutable after construction and safe to share between solves.
    """

    def __init__(self, P_ref, C, beta):
        self.beta = float(beta)
        self.W, self.underflow = discounted_weights(np.asarray(P_ref, float),
                                                    np.asarray(C, float), beta)
        self.fundamental = Fundamental(self.W)

    @classmethod
    def from_graph(cls, g, beta, chain=None):
        P = transition_matrix(g) if chain is None else chain.P_ref
        return cls(P, g.cost_matrix(), beta)

    @property
    def n(self):
        return self.W.shape[0]

    @property
    def Z(self):
        return self.fundamental.matrix

    @cached_property
    def diag(self):
        return np.diag(self.Z).copy()

    @cached_property
    def Z_h(self):
        Zh = self.Z / self.diag[None, :]
        np.fill_diagonal(Zh, 1.0)
        Zh.flags.writeable = False
        return Zh

    def free_energy_distances(self):
        """``phi_T = -T log Z_h``: directed free energy between node pairs."""
        with np.errstate(divide="ignore"):
            phi = -np.log(self.Z_h) / self.beta
        np.fill_diagonal(phi, 0.0)
        return phi


@dataclass(frozen=True, eq=False)
class HittingSolution(TransportSolution):
    """Solution of the hitting-path problem.

    Attributes
    ----------
    kernel : HittingKernel
        Factorization the solution was computed from.
    """

    mode = "hitting"

    kernel: HittingKernel = None

    @property
    def gamma_h(self):
        return self.gamma

    @property
    def fe_min_h(self):
        return self.fe_min

    def dual_free_energy(self):
        """``sum phi_T gamma + T sum gamma log(gamma / (sigma_in sigma_out))``."""
        return free_energy_from_coupling(self.gamma, self.kernel.Z_h, self.sigma_in,
                                         self.sigma_out, self.beta)


def hitting_fundamental(P_ref, C, beta):
    """Return ``(Z, Z_h)`` for the discounted reference walk.

    Raises
    ------
    SingularSystem
        When ``W = P_ref o exp(-beta C)`` has spectral radius numerically one.
    """
    k = HittingKernel(P_ref, C, beta)
    return k.Z, k.Z_h


def hitting_scaling(Z_h, margins, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Scaling vectors making ``Diag(mu_in o sigma_in) Z_h Diag(mu_out o sigma_out)``
    match the margins.

    Returns
    -------
    mu_h_in, mu_h_out : ndarray
    iterations : int
    """
    b = balance(Z_h, margins.sigma_in, margins.sigma_out, margins.sigma_out,
                np.ones(margins.n), tol, max_iter)
    return b.mu_in, b.mu_out, b.iterations


def hitting_coupling(mu_h_in, mu_h_out, Z_h, margins):
    return ((mu_h_in * margins.sigma_in)[:, None] * Z_h
            * (mu_h_out * margins.sigma_out)[None, :])


def hitting_free_energy(mu_h_in, mu_h_out, margins, beta):
    return free_energy_from_scaling(mu_h_in, mu_h_out, margins.sigma_in, margins.sigma_out, beta)


def _second_term_on_edges(Z_h, sigma_out, src, dst, chunk=4096):
    """``(Z_h Diag(sigma_out) Z_h)_{ji}`` for each edge ``(i, j)``; sums run over targets."""
    T = np.flatnonzero(sigma_out > 0)
    A = Z_h[:, T] * sigma_out[T]
    B = Z_h[T, :]
    out = np.empty(src.size)
    for k in range(0, src.size, chunk):
        i, j = src[k:k + chunk], dst[k:k + chunk]
        out[k:k + chunk] = np.einsum("el,le->e", A[j], B[:, i])
    return out


def hitting_edge_flows(Z, Z_h, W, mu_h_in, mu_h_out, sigma_out, neg_tol=NEGATIVE_FLOW_TOL):
    """Expected edge passages of hitting paths.

    ``N = ((1/mu_out)(1/mu_in)^T - (Z_h Diag(sigma_out) Z_h)^T) o (Diag(Z) W)``,
    evaluated on the edges only. The bracket is a difference of nearly equal
    terms; entries negative by less than `neg_tol` times the size of those
    terms are set to zero.

    Raises
    ------
    NumericalBreakdown
        When an entry is negative beyond round-off.
    """
    src, dst = np.nonzero(W)
    first = 1.0 / (mu_h_out[src] * mu_h_in[dst])
    second = _second_term_on_edges(Z_h, sigma_out, src, dst)
    weight = np.diag(Z)[src] * W[src, dst]
    vals = (first - second) * weight
    scale = np.maximum(first, second) * weight
    neg = vals < 0
    if np.any(vals[neg] < -neg_tol * np.maximum(1.0, scale[neg])):
        raise NumericalBreakdown(
            f"edge flow {float(vals.min()):.3g} is negative beyond round-off")
    vals[neg] = 0.0
    N = np.zeros_like(W)
    N[src, dst] = vals
    return N


def hitting_node_visits(Z, Z_h, mu_h_in, mu_h_out, sigma_out):
    """``n = diag(Z) o (1/(mu_in mu_out) - diag(Z_h Diag(sigma_out) Z_h)) + sigma_out``."""
    d = np.einsum("ij,j,ji->i", Z_h, sigma_out, Z_h)
    return np.diag(Z) * (1.0 / (mu_h_in * mu_h_out) - d) + sigma_out


def hitting_policy(N):
    return policy_from_flows(N)


def solve_hitting(g, margins, beta, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, kernel=None):
    """Solve the hitting-path margin-constrained problem on `g`.

    Parameters
    ----------
    g : WeightedDigraph
    margins : MarginPair
    beta : float
        Inverse temperature, > 0. Ignored when `kernel` is given.
    tol, max_iter
        Stopping rule of the scaling iteration.
    kernel : HittingKernel, optional
        Factorization to reuse across margin pairs.

    Returns
    -------
    HittingSolution
    """
    timings = {}
    margins = validate_margins(g, margins.sigma_in, margins.sigma_out)
    t0 = perf_counter()
    if kernel is None:
        kernel = HittingKernel.from_graph(g, beta)
    Z, Z_h = kernel.Z, kernel.Z_h
    timings["factorization"] = perf_counter() - t0

    t0 = perf_counter()
    bal = balance(Z_h, margins.sigma_in, margins.sigma_out, margins.sigma_out,
                  np.ones(margins.n), tol, max_iter)
    mu_in, mu_out = bal.mu_in, bal.mu_out
    timings["scaling"] = perf_counter() - t0

    t0 = perf_counter()
    gamma = bal.coupling(margins.sigma_in, margins.sigma_out)
    N = hitting_edge_flows(Z, Z_h, kernel.W, mu_in, mu_out, margins.sigma_out)
    visits = hitting_node_visits(Z, Z_h, mu_in, mu_out, margins.sigma_out)
    timings["derived"] = perf_counter() - t0
    return HittingSolution(
        gamma=gamma,
        fe_min=hitting_free_energy(mu_in, mu_out, margins, kernel.beta),
        edge_flows=N,
        node_visits=visits,
        policy=hitting_policy(N),
        mu_in=mu_in,
        mu_out=mu_out,
        beta=kernel.beta,
        sigma_in=margins.sigma_in,
        sigma_out=margins.sigma_out,
        iterations=bal.iterations,
        residual=bal.residual,
        underflow=kernel.underflow,
        timings=timings,
        kernel=kernel,
    )
