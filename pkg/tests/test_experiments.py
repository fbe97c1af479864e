import numpy as np
import pytest

from cbop.errors import InputError
from cbop.experiments import bench, edge_table, figure1, node_table, place_margins


class TestPlaceMargins:
    def test_deterministic_and_disjoint(self):
        S1, T1, m1 = place_margins(100, 5, 50, seed=7)
        S2, T2, m2 = place_margins(100, 5, 50, seed=7)
        np.testing.assert_array_equal(S1, S2)
        np.testing.assert_array_equal(T1, T2)
        assert not set(S1) & set(T1)
        np.testing.assert_allclose(m1.sigma_in[S1], 0.2)
        np.testing.assert_allclose(m1.sigma_out[T1], 0.02)
        assert m1.sigma_in.sum() == pytest.approx(1) and m1.sigma_out.sum() == pytest.approx(1)

    def test_seeds_differ(self):
        assert not np.array_equal(place_margins(100, 5, 50, 0)[0], place_margins(100, 5, 50, 1)[0])

    @pytest.mark.parametrize("ns, nt", [(0, 3), (3, 0), (6, 5)])
    def test_invalid_counts(self, ns, nt):
        with pytest.raises(InputError):
            place_margins(10, ns, nt, 0)


class TestFigure1:
    @pytest.fixture(scope="class")
    @classmethod
    def small(cls):
        return figure1(5, 5, 2, 8, betas=(0.01, 10.0), seed=3)

    def test_memberships(self, small):
        _, runs = small
        assert [(r.mode, r.beta) for r in runs] == [("regular", 0.01), ("regular", 10.0),
                                                    ("hitting", 0.01), ("hitting", 10.0)]
        for r in runs:
            assert r.memberships.shape == (8, 2)
            assert r.row_sum_error() <= 1e-9
        hot, cold = runs[2], runs[3]
        assert hot.uniform_deviation() < cold.uniform_deviation()
        assert cold.deterministic_fraction() >= hot.deterministic_fraction()

    def test_tables(self, small):
        g, runs = small
        header, rows = node_table(g, runs[0], 5)
        assert header[:5] == ["node", "row", "col", "role", "visits"] and len(rows) == 25
        roles = [r[3] for r in rows]
        assert roles.count("source") == 2 and roles.count("target") == 8
        assert all(r[5] == "" for r in rows if r[3] != "target")
        header, rows = edge_table(g, runs[0])
        assert header == ["src", "dst", "flow"] and len(rows) == g.n_edges

    def test_metrics_populated(self, small):
        m = small[1][0].metrics()
        assert set(m) >= {"mode", "beta", "fe_min", "iterations", "uniform_deviation",
                          "deterministic_fraction", "membership_row_sum_error", "residuals"}


class TestBench:
    def test_rows(self):
        rows = bench(sizes=(16, 25), seed=0, beta=1.0)
        assert [r.n for r in rows] == [16, 25] and [r.n_sources for r in rows] == [5, 8]
        for r in rows:
            assert min(r.t_exact, r.t_regular, r.t_hitting) > 0
            assert r.exact_cost > 0 and np.isfinite(r.fe_regular) and np.isfinite(r.fe_hitting)
            assert {"regular", "hitting", "augmentations"} <= set(r.details)

    def test_default_sizes_monotone(self):
        rows = bench(sizes=(100, 400, 900), seed=0, repeats=3)
        for col in ("t_exact", "t_regular", "t_hitting"):
            t = [getattr(r, col) for r in rows]
            assert t[0] < t[1] < t[2], (col, t)

    def test_deterministic_values(self):
        a, b = bench(sizes=(16,), seed=2)[0], bench(sizes=(16,), seed=2)[0]
        assert (a.exact_cost, a.fe_regular, a.fe_hitting) == (b.exact_cost, b.fe_regular,
                                                              b.fe_hitting)

    def test_non_square(self):
        with pytest.raises(InputError):
            bench(sizes=(20,))
