"""Pieces shared by the regular and hitting solvers."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .errors import DivergentScaling, InputError, NoConvergence, NumericalUnderflowWarning, SingularSystem

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
# alternating sweeps before Newton steps on the dual are interleaved
NEWTON_AFTER = 200
NEWTON_FLUSH = 1e-150
# reciprocal condition number below which I - W is declared singular
RCOND_FLOOR = 1e-15


def discounted_weights(P, C, beta, mask=None):
    """``P o exp(-beta C)`` and a flag telling whether it underflowed on an edge."""
    if not beta > 0:
        raise InputError("beta must be > 0")
    if mask is None:
        mask = P > 0
    with np.errstate(under="ignore"):
        K = np.exp(-beta * C)
        W = P * K
    underflow = bool(np.any(K[mask] < np.finfo(float).tiny))
    if underflow:
        warnings.warn(f"exp(-beta*c) underflows on some edges at beta={beta:g}",
                      NumericalUnderflowWarning, stacklevel=3)
    return W, underflow


class Fundamental:
    """LU factorization of ``I - W`` standing in for ``Z = (I - W)^-1``.

    ``solve`` and ``solve_T`` apply ``Z`` and ``Z^T`` without forming the
    inverse; :attr:`matrix` forms it on first use.
    """

    def __init__(self, W):
        W = np.asarray(W, dtype=float)
        n = W.shape[0]
        M = np.eye(n) - W
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            self.lu, self.piv = scipy.linalg.lu_factor(M, check_finite=False)
        anorm = np.abs(M).sum(axis=0).max()
        rcond, info = lapack.dgecon(self.lu, anorm, norm="1")
        self.rcond = float(rcond)
        if info != 0 or not np.isfinite(self.rcond) or self.rcond < RCOND_FLOOR:
            raise SingularSystem(
                f"I - W is numerically singular (rcond={self.rcond:.3g}); "
                "its spectral radius is not below one")
        self.W = W
        self.n = n

    def solve(self, x):
        return scipy.linalg.lu_solve((self.lu, self.piv), x, check_finite=False)

    def solve_T(self, x):
        return scipy.linalg.lu_solve((self.lu, self.piv), x, trans=1, check_finite=False)

    @cached_property
    def matrix(self):
        lwork, _ = lapack.dgetri_lwork(self.n)
        Z, info = lapack.dgetri(self.lu, self.piv, lwork=int(lwork))
        if info != 0:
            raise SingularSystem("inversion of I - W failed")
        # entries are sums of nonnegative path weights
        np.clip(Z, 0.0, None, out=Z)
        return Z


def support_kernel(Z, rows, cols):
    """``Z[rows][:, cols]`` from a dense matrix or a :class:`Fundamental`.

    With a factorization and no cached inverse, the smaller side of the
    block is obtained by ``min(len(rows), len(cols))`` solves.
    """
    if isinstance(Z, Fundamental) and "matrix" not in Z.__dict__:
        eye = np.eye(Z.n)
        if cols.size <= rows.size:
            K = Z.solve(eye[:, cols])[rows]
        else:
            K = Z.solve_T(eye[:, rows]).T[:, cols]
        return np.clip(K, 0.0, None)
    Z = Z.matrix if isinstance(Z, Fundamental) else np.asarray(Z)
    return Z[np.ix_(rows, cols)]


def _apply(Z, x, transpose=False):
    """``Z x`` or ``Z^T x`` without forming ``Z`` when only a factorization exists."""
    if isinstance(Z, Fundamental) and "matrix" not in Z.__dict__:
        return Z.solve_T(x) if transpose else Z.solve(x)
    Z = Z.matrix if isinstance(Z, Fundamental) else np.asarray(Z)
    return Z.T @ x if transpose else Z @ x


def _newton_step(K, a, b, r, s):
    """One damped Newton step on ``f(a, b) = sum(e^a K e^b) - r.a - s.b``.

    The stationary point of `f` is the balanced matrix; ``b[-1]`` is held
    fixed to remove the ``(e, -e)`` invariance.
    """
    def objective(a, b):
        with np.errstate(over="ignore"):
            return float(np.exp(a) @ K @ np.exp(b) - r @ a - s @ b)

    G = np.exp(a)[:, None] * K * np.exp(b)[None, :]
    row, col = G.sum(axis=1), G.sum(axis=0)
    ga, gb = row - r, col - s
    # negligible entries would push the products below into slow subnormals
    G[G < NEWTON_FLUSH] = 0.0
    # Schur complement on b after eliminating a
    Gs = G / row[:, None]
    S = np.diag(col) - G.T @ Gs
    rhs = gb - Gs.T @ ga
    db = np.zeros_like(b)
    if b.size > 1:
        # a poor direction is caught by the line search below
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                db[:-1] = scipy.linalg.solve(S[:-1, :-1], rhs[:-1], assume_a="sym")
        except (np.linalg.LinAlgError, ValueError):
            return a, b
    da = (ga - G @ db) / row
    f0 = objective(a, b)
    slope = -(ga @ da + gb @ db)
    t = 1.0
    for _ in range(40):
        a1, b1 = a - t * da, b - t * db
        f1 = objective(a1, b1)
        if np.isfinite(f1) and f1 <= f0 + 1e-4 * t * slope:
            return a1, b1
        t *= 0.5
    return a, b


def _polish(K, x, y, r, s, w, c, residual):
    u = K @ (y * w)
    _, b = _newton_step(K, np.log(r / u), np.log(y * w), r, s)
    y1 = np.exp(b) / w
    x1 = 1.0 / (K @ (y1 * w))
    v1 = K.T @ (x1 * r)
    y1 = c / v1
    u1 = K @ (y1 * w)
    res1 = np.abs(r * x1 * u1 - r).max() + np.abs(w * y1 * v1 - s).max()
    ok = (np.all(np.isfinite(x1)) and np.all(np.isfinite(y1)) and x1.min() > 0
          and y1.min() > 0 and res1 < residual)
    return (x1, y1, res1) if ok else (x, y, residual)


@dataclass(frozen=True, eq=False)
class Balanced:
    """Outcome of :func:`balance`.

    ``K`` is the kernel restricted to (rows with ``sigma_in > 0``) x
    (columns with ``col_weight > 0``); only these entries of the coupling
    can be nonzero.
    """

    mu_in: np.ndarray
    mu_out: np.ndarray
    iterations: int
    residual: float
    rows: np.ndarray
    cols: np.ndarray
    K: np.ndarray

    def coupling(self, sigma_in, col_weight):
        n = sigma_in.size
        G = np.zeros((n, n))
        r, c = self.rows, self.cols
        G[np.ix_(r, c)] = ((self.mu_in[r] * sigma_in[r])[:, None] * self.K
                           * (self.mu_out[c] * col_weight[c])[None, :])
        return G


def balance(Z, sigma_in, sigma_out, col_weight, col_target, tol=DEFAULT_TOL,
            max_iter=DEFAULT_MAX_ITER, newton_after=NEWTON_AFTER, polish=True):
    """Alternating row/column rescaling of ``Diag(sigma_in) Z Diag(col_weight)``.

    Iterates ``mu_in = 1 / (Z (mu_out o col_weight))`` and
    ``mu_out = col_target / (Z^T (mu_in o sigma_in))`` from ``mu_out = e``
    until the rescaled matrix has row sums `sigma_in` and column sums
    `sigma_out` to within `tol` (sum of both max-norm residuals).

    Only the block of `Z` on the margin supports enters the iteration; the
    same two formulas then extend the scaling vectors to every node.
    Alternating sweeps slow down sharply at low temperature, so after
    `newton_after` sweeps each iteration is preceded by a Newton step on the
    convex dual of the balancing problem; the fixed point is unchanged.
    Pass ``newton_after=None`` for plain sweeps. With `polish`, one more
    Newton step and sweep follow convergence and are kept only if they lower
    the residual; the free energy is then exact to round-off even at high
    temperature, where scaling vectors are large.

    Parameters
    ----------
    Z : ndarray or Fundamental
    sigma_in, sigma_out : ndarray
    col_weight, col_target : ndarray
        ``alpha`` and ``n_ref`` for regular paths, ``sigma_out`` and ``e``
        for hitting paths.

    Returns
    -------
    Balanced
    """
    if not tol > 0:
        raise InputError("tol must be > 0")
    if max_iter < 1:
        raise InputError("max_iter must be >= 1")
    rows = np.flatnonzero(sigma_in > 0)
    cols = np.flatnonzero(col_weight > 0)
    K = support_kernel(Z, rows, cols)
    r, s = sigma_in[rows], sigma_out[cols]
    w, c = col_weight[cols], col_target[cols]
    y = np.ones(cols.size)
    u = K @ (y * w)
    residual = np.inf
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for it in range(1, max_iter + 1):
            if newton_after is not None and it > newton_after:
                a, b = _newton_step(K, np.log(r / u), np.log(y * w), r, s)
                y = np.exp(b) / w
                u = K @ (y * w)
            x = 1.0 / u
            v = K.T @ (x * r)
            y = c / v
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))
                    and x.min() > 0 and y.min() > 0):
                raise DivergentScaling(f"scaling vectors left (0, inf) at iteration {it}")
            u = K @ (y * w)
            residual = np.abs(r * x * u - r).max() + np.abs(w * y * v - s).max()
            if residual <= tol:
                break
        else:
            raise NoConvergence(
                f"margin residual {residual:.3g} > tol={tol:g} after {max_iter} iterations",
                iterations=max_iter, residual=float(residual))
        if polish:
            x, y, residual = _polish(K, x, y, r, s, w, c, residual)
        n = sigma_in.size
        yw, xr = np.zeros(n), np.zeros(n)
        yw[cols], xr[rows] = y * w, x * r
        mu_in = 1.0 / _apply(Z, yw)
        mu_in[rows] = x
        mu_out = col_target / _apply(Z, xr, transpose=True)
        mu_out[cols] = y
    if not (np.all(np.isfinite(mu_in)) and np.all(np.isfinite(mu_out))
            and mu_in.min() > 0 and mu_out.min() > 0):
        raise DivergentScaling("scaling vectors off the margin supports left (0, inf)")
    return Balanced(mu_in, mu_out, it, float(residual), rows, cols, K)


def policy_from_flows(N):
    """Row-normalize edge flows; rows without outflow stay zero."""
    out = N.sum(axis=1)
    inv = np.divide(1.0, out, out=np.zeros_like(out), where=out > 0)
    return inv[:, None] * N


def margin_residual(gamma, sigma_in, sigma_out):
    return float(np.abs(gamma.sum(axis=1) - sigma_in).max()
                 + np.abs(gamma.sum(axis=0) - sigma_out).max())


def conservation_residual(N, sigma_in, sigma_out):
    """``||(N - N^T) e - (sigma_in - sigma_out)||_inf``."""
    return float(np.abs(N.sum(axis=1) - N.sum(axis=0) - (sigma_in - sigma_out)).max())


def consistency_residual(N, visits, sigma_out):
    """``||n - (N e + sigma_out)||_inf``."""
    return float(np.abs(visits - N.sum(axis=1) - sigma_out).max())


def residuals(gamma, N, visits, sigma_in, sigma_out):
    return {
        "margin": margin_residual(gamma, sigma_in, sigma_out),
        "conservation": conservation_residual(N, sigma_in, sigma_out),
        "consistency": consistency_residual(N, visits, sigma_out),
        "normalization": float(abs(gamma.sum() - 1.0)),
    }


def free_energy_from_scaling(mu_in, mu_out, sigma_in, sigma_out, beta):
    """``(1/beta) (log(mu_in) . sigma_in + log(mu_out) . sigma_out)``."""
    return float((np.log(mu_in) @ sigma_in + np.log(mu_out) @ sigma_out) / beta)


def free_energy_from_coupling(gamma, kernel, row_w, col_w, beta):
    """Free energy written on the coupling alone.

    ``-T sum log(k_ij) g_ij + T sum g_ij log(g_ij / (row_w_i col_w_j))`` over
    the support of ``gamma``; `kernel` is ``Z_hat`` (regular, with
    ``col_w = alpha``) or ``Z_h`` (hitting, with ``col_w = sigma_out``).
    """
    s = gamma > 0
    g = gamma[s]
    ref = np.outer(row_w, col_w)[s]
    return float((-(np.log(kernel[s]) @ g) + g @ np.log(g / ref)) / beta)


@dataclass(frozen=True, eq=False)
class TransportSolution:
    """Common result of both solvers.

    Attributes
    ----------
    gamma : ndarray (n, n)
        Coupling: probability that a path starts at ``i`` and ends at ``j``.
    fe_min : float
        Minimum free energy.
    edge_flows : ndarray (n, n)
        Expected number of passages through each edge.
    node_visits : ndarray (n,)
        Expected number of visits to each node.
    policy : ndarray (n, n)
        Biased transition probabilities induced by the edge flows.
    mu_in, mu_out : ndarray (n,)
        Scaling vectors (exponentiated, sign-flipped Lagrange multipliers).
    """

    mode = "base"

    gamma: np.ndarray
    fe_min: float
    edge_flows: np.ndarray
    node_visits: np.ndarray
    policy: np.ndarray
    mu_in: np.ndarray
    mu_out: np.ndarray
    beta: float
    sigma_in: np.ndarray
    sigma_out: np.ndarray
    iterations: int
    residual: float
    underflow: bool = False
    timings: dict = field(default_factory=dict)

    @property
    def temperature(self):
        return 1.0 / self.beta

    @property
    def lambda_in(self):
        """Lagrange multipliers of the starting-margin constraints."""
        return -np.log(self.mu_in) / self.beta

    @property
    def lambda_out(self):
        return -np.log(self.mu_out) / self.beta

    def residuals(self):
        return residuals(self.gamma, self.edge_flows, self.node_visits,
                         self.sigma_in, self.sigma_out)

    def expected_cost(self, C):
        """``sum(N o C)``: total expected cost carried by the edge flows."""
        return float((self.edge_flows * C).sum())

    def memberships(self):
        """``P(S = i | E = j) = gamma_ij / sigma_out_j`` (zero columns off target)."""
        out = np.zeros_like(self.gamma)
        t = self.sigma_out > 0
        out[:, t] = self.gamma[:, t] / self.sigma_out[t]
        return out
