"""Seeded instance generators shared by the test modules."""
import numpy as np

from cbop import WeightedDigraph, build_graph, make_random_graph, validate_margins


def g2():
    """Two nodes joined both ways, unit affinity and unit cost."""
    return build_graph([(1, 2, 1, 1), (2, 1, 1, 1)])


def path3():
    """Undirected path 1-2-3 with unit affinities and costs."""
    return build_graph([(1, 2, 1, 1), (2, 1, 1, 1), (2, 3, 1, 1), (3, 2, 1, 1)])


def random_margins(n, rng, max_support=None):
    """Random margins with random supports (possibly overlapping)."""
    k = max_support or n
    si, so = np.zeros(n), np.zeros(n)
    S = rng.choice(n, size=int(rng.integers(1, min(k, n) + 1)), replace=False)
    T = rng.choice(n, size=int(rng.integers(1, min(k, n) + 1)), replace=False)
    si[S] = rng.dirichlet(np.ones(S.size))
    so[T] = rng.dirichlet(np.ones(T.size))
    return validate_margins(n, si, so, renormalize=True)


def random_instance(seed, n_min=3, n_max=100, unit_costs=False, cost_range=(0.5, 2.0)):
    """Random strongly connected graph and random margins from one seed."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_min, n_max + 1))
    p = float(rng.uniform(0.0, min(1.0, 8.0 / n)))
    g = make_random_graph(n, seed=seed, p=p, unit_costs=unit_costs, cost_range=cost_range)
    return g, random_margins(n, rng)


def uniform_margins(n):
    u = np.full(n, 1.0 / n)
    return validate_margins(n, u, u)


def dense_graph(A, C):
    return WeightedDigraph.from_dense(np.asarray(A, float), np.asarray(C, float))
