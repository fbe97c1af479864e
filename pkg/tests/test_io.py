import numpy as np
import pytest

from cbop import io
from cbop.errors import InputError
from instances import path3, random_instance


def write(path, text):
    path.write_text(text)
    return path


class TestGraphFiles:
    def test_round_trip(self, tmp_path):
        g, _ = random_instance(0, n_max=30)
        io.write_graph(tmp_path / "g.csv", g)
        h = io.read_graph(tmp_path / "g.csv")
        assert h.n == g.n
        np.testing.assert_array_equal(h.adjacency(), g.adjacency())
        np.testing.assert_array_equal(h.cost_matrix(), g.cost_matrix())

    def test_cost_from_affinity(self, tmp_path):
        p = write(tmp_path / "g.csv", "src,dst,affinity\n1,2,2\n2,1,0.5\n")
        g = io.read_graph(p, cost_from_affinity=True)
        np.testing.assert_allclose(g.cost_matrix(), [[0, 0.5], [2, 0]])

    def test_missing_cost_column(self, tmp_path):
        p = write(tmp_path / "g.csv", "src,dst,affinity\n1,2,1\n2,1,1\n")
        with pytest.raises(InputError, match="cost"):
            io.read_graph(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError, match="not found"):
            io.read_graph(tmp_path / "none.csv")

    def test_unparsable_value(self, tmp_path):
        p = write(tmp_path / "g.csv", "src,dst,affinity,cost\n1,2,x,1\n2,1,1,1\n")
        with pytest.raises(InputError, match="parse"):
            io.read_graph(p)

    def test_header_only(self, tmp_path):
        p = write(tmp_path / "g.csv", "src,dst,affinity,cost\n")
        with pytest.raises(InputError, match="no data"):
            io.read_graph(p)


class TestNodeFiles:
    def test_margins_unlisted_nodes_are_zero(self, tmp_path):
        p = write(tmp_path / "m.csv", "node,sigma_in,sigma_out\n1,1,0\n3,0,1\n")
        si, so = io.read_margins(p, 4)
        np.testing.assert_array_equal(si, [1, 0, 0, 0])
        np.testing.assert_array_equal(so, [0, 0, 1, 0])

    @pytest.mark.parametrize("node", ["0", "5"])
    def test_node_out_of_range(self, tmp_path, node):
        p = write(tmp_path / "m.csv", f"node,sigma_in,sigma_out\n{node},1,1\n")
        with pytest.raises(InputError, match="outside"):
            io.read_margins(p, 4)

    def test_weights_must_cover_all_nodes(self, tmp_path):
        p = write(tmp_path / "w.csv", "node,weight\n1,0.5\n2,0.5\n")
        with pytest.raises(InputError, match="every node"):
            io.read_weights(p, 3)

    def test_groups(self, tmp_path):
        p = write(tmp_path / "gr.csv",
                  "node,group,membership\n1,a,1\n2,b,0.5\n2,a,0.5\n3,b,1\n")
        M, labels = io.read_groups(p, 3)
        assert labels == ("a", "b")
        np.testing.assert_array_equal(M, [[1, 0], [0.5, 0.5], [0, 1]])

    def test_vectors_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        cols = {"a": rng.random(50) * 10.0 ** rng.integers(-300, 300, 50),
                "b": rng.standard_normal(50)}
        io.write_vectors(tmp_path / "v.csv", cols)
        back = io.read_vectors(tmp_path / "v.csv", 50, ["a", "b"])
        for c in cols:
            np.testing.assert_array_equal(back[c], cols[c])


class TestMatrixFiles:
    def test_sparse_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        M = rng.random((20, 20)) / 3
        M[M < 0.15] = 0
        io.write_matrix(tmp_path / "m.csv", M, "gamma")
        np.testing.assert_array_equal(io.read_matrix(tmp_path / "m.csv", 20, "gamma"), M)
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "src,dst,gamma" and len(lines) == 1 + np.count_nonzero(M)

    def test_dense_keeps_zeros(self, tmp_path):
        io.write_matrix(tmp_path / "m.csv", np.eye(3), "d", sparse=False)
        assert len((tmp_path / "m.csv").read_text().splitlines()) == 10

    def test_one_based_ids(self, tmp_path):
        M = np.zeros((3, 3))
        M[0, 2] = 0.1
        io.write_matrix(tmp_path / "m.csv", M)
        assert (tmp_path / "m.csv").read_text().splitlines()[1] == "1,3,0.10000000000000001"


class TestJson:
    def test_numpy_and_non_finite(self, tmp_path):
        obj = {"a": np.arange(3), "b": np.float64(np.inf), "c": np.int64(4), "d": (1.5,)}
        io.write_json(tmp_path / "x.json", obj)
        assert io.read_json(tmp_path / "x.json") == {"a": [0, 1, 2], "b": "inf", "c": 4,
                                                     "d": [1.5]}

    def test_missing(self, tmp_path):
        with pytest.raises(InputError):
            io.read_json(tmp_path / "x.json")

    def test_graph_writer_matches_edges(self, tmp_path):
        io.write_graph(tmp_path / "g.csv", path3())
        text = (tmp_path / "g.csv").read_text().splitlines()
        assert text[0] == "src,dst,affinity,cost" and len(text) == 5
