"""Margin-constrained bag of regular (non-hitting) paths.

Paths follow a killed reference walk; a path may pass through its ending
node several times before stopping there.
"""
from dataclasses import dataclass
from time import perf_counter

import numpy as np

from .graph import reference_transitions, validate_margins
from .killing import DEFAULT_EPSILON_GAP, killed_transitions, killing_profile
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


@dataclass(frozen=True, eq=False)
class RegularSolution(TransportSolution):
    """Solution of the regular problem; adds the killing profile.

    Attributes
    ----------
    alpha : ndarray
        Killing rates of the reference walk.
    n_ref : ndarray
        Expected visits of the killed reference walk.
    epsilon : float
        Persistence added along the stationary distribution.
    """

    mode = "regular"

    alpha: np.ndarray = None
    n_ref: np.ndarray = None
    epsilon: float = float("nan")
    Z_support: np.ndarray = None

    def dual_free_energy(self):
        """Free energy recomputed from the coupling; equals `fe_min` at optimum.

        Uses ``Z_support``, the block of ``Z_hat`` on sources x targets.
        """
        S, T = np.flatnonzero(self.sigma_in > 0), np.flatnonzero(self.alpha > 0)
        return free_energy_from_coupling(self.gamma[np.ix_(S, T)], self.Z_support,
                                         self.sigma_in[S], self.alpha[T], self.beta)


def regular_weights(P_hat_ref, C, beta):
    """``W_hat = P_hat_ref o exp(-beta C)`` and an underflow flag."""
    return discounted_weights(np.asarray(P_hat_ref, float), np.asarray(C, float), beta)


def regular_fundamental(P_hat_ref, C, beta):
    """Fundamental matrix ``Z_hat = (I - W_hat)^-1`` of the killed, discounted walk.

    Raises
    ------
    SingularSystem
        When ``I - W_hat`` is numerically singular.
    """
    W, _ = regular_weights(P_hat_ref, C, beta)
    return Fundamental(W).matrix


def regular_scaling(Z_hat, margins, alpha, n_ref, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Scaling vectors making ``Diag(mu_in o sigma_in) Z_hat Diag(mu_out o alpha)``
    match the margins.

    `Z_hat` may be a dense matrix or a :class:`~cbop.solution.Fundamental`.

    Returns
    -------
    mu_in, mu_out : ndarray
    iterations : int
    """
    b = balance(Z_hat, margins.sigma_in, margins.sigma_out, np.asarray(alpha, float),
                np.asarray(n_ref, float), tol, max_iter)
    return b.mu_in, b.mu_out, b.iterations


def regular_coupling(mu_in, mu_out, Z_hat, sigma_in, alpha):
    """``Gamma = Diag(mu_in o sigma_in) Z_hat Diag(mu_out o alpha)``."""
    return (mu_in * sigma_in)[:, None] * Z_hat * (mu_out * alpha)[None, :]


def regular_free_energy(mu_in, mu_out, margins, beta):
    return free_energy_from_scaling(mu_in, mu_out, margins.sigma_in, margins.sigma_out, beta)


def regular_edge_flows(n_ref, mu_in, mu_out, W_hat):
    """``N = Diag(n_ref / mu_out) W_hat Diag(1 / mu_in)``."""
    return (n_ref / mu_out)[:, None] * W_hat / mu_in[None, :]


def regular_node_visits(n_ref, mu_in, mu_out):
    """``n_i = n_ref_i / (mu_in_i mu_out_i)``."""
    return n_ref / (mu_in * mu_out)


def regular_policy(N):
    return policy_from_flows(N)


def solve_regular(g, margins, beta, epsilon_gap=DEFAULT_EPSILON_GAP, tol=DEFAULT_TOL,
                  max_iter=DEFAULT_MAX_ITER, chain=None):
    """Solve the regular margin-constrained problem on `g`.

    Parameters
    ----------
    g : WeightedDigraph
    margins : MarginPair
    beta : float
        Inverse temperature, > 0.
    epsilon_gap : float
        Slack added to the smallest admissible persistence.
    tol, max_iter
        Stopping rule of the scaling iteration (margin residual).
    chain : ReferenceChain, optional
        Precomputed reference chain of `g`.

    Returns
    -------
    RegularSolution
    """
    timings = {}
    t0 = perf_counter()
    margins = validate_margins(g, margins.sigma_in, margins.sigma_out)
    if chain is None:
        chain = reference_transitions(g)
    prof = killing_profile(chain, margins, epsilon_gap)
    P_hat = killed_transitions(chain, prof.alpha)
    timings["killing"] = perf_counter() - t0

    t0 = perf_counter()
    W_hat, underflow = regular_weights(P_hat, g.cost_matrix(), beta)
    fund = Fundamental(W_hat)
    timings["factorization"] = perf_counter() - t0

    t0 = perf_counter()
    bal = balance(fund, margins.sigma_in, margins.sigma_out, prof.alpha, prof.n_ref,
                  tol, max_iter)
    mu_in, mu_out = bal.mu_in, bal.mu_out
    timings["scaling"] = perf_counter() - t0

    t0 = perf_counter()
    gamma = bal.coupling(margins.sigma_in, prof.alpha)
    N = regular_edge_flows(prof.n_ref, mu_in, mu_out, W_hat)
    visits = regular_node_visits(prof.n_ref, mu_in, mu_out)
    timings["derived"] = perf_counter() - t0
    return RegularSolution(
        gamma=gamma,
        fe_min=regular_free_energy(mu_in, mu_out, margins, beta),
        edge_flows=N,
        node_visits=visits,
        policy=regular_policy(N),
        mu_in=mu_in,
        mu_out=mu_out,
        beta=float(beta),
        sigma_in=margins.sigma_in,
        sigma_out=margins.sigma_out,
        iterations=bal.iterations,
        residual=bal.residual,
        underflow=underflow,
        timings=timings,
        alpha=prof.alpha,
        n_ref=prof.n_ref,
        epsilon=prof.epsilon,
        Z_support=bal.K,
    )
