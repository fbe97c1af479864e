"""Lattice experiments: membership maps and solver timings."""
import math
from dataclasses import dataclass, field
from time import perf_counter

import numpy as np

from .errors import InputError
from .exact import exact_flow
from .graph import make_lattice, validate_margins
from .hitting import solve_hitting
from .regular import solve_regular

FIGURE1_BETAS = (1e-3, 1e-1, 10.0)
DETERMINISTIC_LEVEL = 0.99


def place_margins(n, n_sources, n_targets, seed, source_mass=None, target_mass=None):
    """Draw disjoint source and target sets uniformly without replacement.

    Sources share `source_mass` each (default ``1 / n_sources``) and targets
    `target_mass` each (default ``1 / n_targets``).

    Returns
    -------
    sources, targets : ndarray of int (zero-based)
    margins : MarginPair
    """
    if n_sources < 1 or n_targets < 1 or n_sources + n_targets > n:
        raise InputError("need at least one source and one target, disjoint, within n nodes")
    perm = np.random.default_rng(seed).permutation(n)
    S, T = np.sort(perm[:n_sources]), np.sort(perm[n_sources:n_sources + n_targets])
    si, so = np.zeros(n), np.zeros(n)
    si[S] = 1.0 / n_sources if source_mass is None else source_mass
    so[T] = 1.0 / n_targets if target_mass is None else target_mass
    return S, T, validate_margins(n, si, so)


@dataclass
class MembershipRun:
    """One (mode, beta) panel of the membership experiment."""

    mode: str
    beta: float
    solution: object
    sources: np.ndarray
    targets: np.ndarray

    @property
    def memberships(self):
        """``targets x sources`` matrix of ``P(start = i | end = j)``."""
        return self.solution.memberships()[np.ix_(self.sources, self.targets)].T

    def uniform_deviation(self):
        return float(np.abs(self.memberships - 1.0 / self.sources.size).max())

    def deterministic_fraction(self, level=DETERMINISTIC_LEVEL):
        return float((self.memberships.max(axis=1) >= level).mean())

    def row_sum_error(self):
        return float(np.abs(self.memberships.sum(axis=1) - 1.0).max())

    def metrics(self):
        return {
            "mode": self.mode,
            "beta": self.beta,
            "fe_min": self.solution.fe_min,
            "iterations": self.solution.iterations,
            "uniform_deviation": self.uniform_deviation(),
            "deterministic_fraction": self.deterministic_fraction(),
            "membership_row_sum_error": self.row_sum_error(),
            "residuals": self.solution.residuals(),
        }


def figure1(rows=10, cols=10, n_sources=5, n_targets=50, betas=FIGURE1_BETAS, seed=0,
            modes=("regular", "hitting")):
    """Solve the lattice membership experiment for every mode and ``beta``.

    Returns
    -------
    g : WeightedDigraph
    runs : list of MembershipRun
    """
    g = make_lattice(rows, cols)
    S, T, m = place_margins(g.n, n_sources, n_targets, seed,
                            source_mass=1.0 / n_sources, target_mass=1.0 / n_targets)
    runs = []
    for mode in modes:
        solve = solve_hitting if mode == "hitting" else solve_regular
        for beta in betas:
            runs.append(MembershipRun(mode, float(beta), solve(g, m, beta), S, T))
    return g, runs


def node_table(g, run, cols):
    """Rows ``node,row,col,role,visits,m_<source>...`` for one panel."""
    S, T = run.sources, run.targets
    M = run.solution.memberships()
    role = np.full(g.n, "other", dtype=object)
    role[S] = "source"
    role[T] = "target"
    header = ["node", "row", "col", "role", "visits"] + [f"m_{s + 1}" for s in S]
    out = []
    for i in range(g.n):
        mem = [float(M[s, i]) for s in S] if role[i] == "target" else [""] * S.size
        out.append([i + 1, i // cols + 1, i % cols + 1, role[i],
                    float(run.solution.node_visits[i])] + mem)
    return header, out


def edge_table(g, run):
    N = run.solution.edge_flows
    return ["src", "dst", "flow"], [(int(i) + 1, int(j) + 1, float(N[i, j]))
                                   for i, j in zip(g.src, g.dst)]


@dataclass
class BenchRow:
    n: int
    n_sources: int
    t_exact: float
    t_regular: float
    t_hitting: float
    exact_cost: float
    fe_regular: float
    fe_hitting: float
    details: dict = field(default_factory=dict)


def _best_time(fn, repeats):
    best, out = math.inf, None
    for _ in range(repeats):
        t0 = perf_counter()
        out = fn()
        best = min(best, perf_counter() - t0)
    return best, out


def bench(sizes=(100, 400, 900), seed=0, beta=1.0, repeats=1):
    """Wall times of the exact flow and both solvers on square lattices.

    Each size must be a perfect square ``n``; ``floor(n / 3)`` sources and as
    many disjoint targets carry uniform mass. Times are the best of `repeats`.
    """
    rows = []
    for n in sizes:
        k = math.isqrt(n)
        if k * k != n:
            raise InputError(f"lattice size {n} is not a perfect square")
        g = make_lattice(k, k)
        r = n // 3
        _, _, m = place_margins(n, r, r, seed)
        te, fl = _best_time(lambda: exact_flow(g, m), repeats)
        tr, sr = _best_time(lambda: solve_regular(g, m, beta), repeats)
        th, sh = _best_time(lambda: solve_hitting(g, m, beta), repeats)
        rows.append(BenchRow(n, r, te, tr, th, fl.total_cost, sr.fe_min, sh.fe_min,
                             {"regular": sr.timings, "hitting": sh.timings,
                              "iterations_regular": sr.iterations,
                              "iterations_hitting": sh.iterations,
                              "augmentations": fl.augmentations}))
    return rows
