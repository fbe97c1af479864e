"""Killed Markov process giving the reference path distribution its margins.

The reference walk is stopped at node ``i`` with probability ``alpha_i`` after
each visit. Killing rates are chosen so that a walker started from
``sigma_in`` is killed according to ``sigma_out``.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import AlphaOutOfRange, IllConditionedPseudoinverse, InputError
from .graph import MAX_CONDITION, factor_generator

DEFAULT_EPSILON_GAP = 1e-8


@dataclass(frozen=True, eq=False)
class KillingProfile:
    alpha: np.ndarray
    n_ref: np.ndarray
    epsilon: float
    epsilon_gap: float


def _pinv_solve(chain, rhs):
    """Minimum-norm solution of ``(I - P_ref^T) x = rhs`` for ``e^T rhs = 0``.

    A particular solution comes from the bordered factorization of the
    chain; removing its component along ``pi_ref``, which spans the null
    space, leaves the pseudoinverse solution.
    """
    if chain._lu is None:
        lu, piv, cond = factor_generator(np.asarray(chain.P_ref))
    else:
        lu, piv, cond = chain._lu
    if cond > MAX_CONDITION:
        raise IllConditionedPseudoinverse(
            f"condition estimate {cond:.3g} of the generator system exceeds {MAX_CONDITION:g}")
    b = np.array(rhs, dtype=float)
    b[-1] = 0.0
    x = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
    pi = chain.pi_ref
    return x - (x @ pi) / (pi @ pi) * pi


def reference_visits(chain, margins, epsilon_gap=DEFAULT_EPSILON_GAP):
    """Expected visits ``n_ref`` of the killed reference walk and persistence.

    Solves ``(I - P^T) n_ref = sigma_in - P^T sigma_out`` through the
    pseudoinverse, then adds ``epsilon * pi_ref`` with ``epsilon`` set
    `epsilon_gap` above the smallest value keeping ``n_ref >= sigma_out``.

    Returns
    -------
    n_ref : ndarray
    epsilon : float
    """
    if not epsilon_gap > 0:
        raise InputError("epsilon_gap must be > 0")
    P = chain.P_ref
    pi = chain.pi_ref
    rhs = margins.sigma_in - P.T @ margins.sigma_out
    n0 = _pinv_solve(chain, rhs)
    with np.errstate(divide="ignore"):
        ratio = np.where(pi > 0, (margins.sigma_out - n0) / pi, -np.inf)
    epsilon = float(ratio.max()) + epsilon_gap
    n_ref = n0 + epsilon * pi
    return n_ref, epsilon


def killing_rates(n_ref, sigma_out):
    """``alpha = sigma_out / n_ref``; entries within 1e-12 above one are clamped."""
    n_ref = np.asarray(n_ref, dtype=float)
    if np.any(n_ref <= 0):
        raise AlphaOutOfRange("expected visit counts must be positive")
    alpha = np.asarray(sigma_out, dtype=float) / n_ref
    if alpha.max() > 1 + 1e-12:
        raise AlphaOutOfRange(
            f"killing rate {alpha.max():.6g} > 1: persistence below its lower bound")
    return np.clip(alpha, 0.0, 1.0)


def killed_transitions(chain_or_P, alpha):
    """Substochastic matrix ``(I - Diag(alpha)) P_ref``."""
    P = getattr(chain_or_P, "P_ref", chain_or_P)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise InputError("killing rates must lie in [0, 1]")
    return (1.0 - alpha)[:, None] * P


def killing_profile(chain, margins, epsilon_gap=DEFAULT_EPSILON_GAP):
    n_ref, eps = reference_visits(chain, margins, epsilon_gap)
    alpha = killing_rates(n_ref, margins.sigma_out)
    return KillingProfile(alpha, n_ref, eps, epsilon_gap)
