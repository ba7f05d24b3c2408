"""Graph core: construction invariants, powers, induced subgraphs, FLOPs."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msgnn.graphs import (
    GraphError,
    LabelVector,
    Masks,
    NodeSelection,
    SparseGraph,
    degrees,
    gcn_layer_flops,
    graph_power,
    induced_subgraph,
    restrict,
)


def path_graph(n):
    return SparseGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def random_graph(rng, n, p=0.2):
    mask = np.triu(rng.random((n, n)) < p, k=1)
    u, v = np.nonzero(mask)
    return SparseGraph.from_edges(n, np.stack([u, v], axis=1))


def dense_power_oracle(g, p):
    """Reference: binarize(zero-diag(A^p)) with dense matrix powers."""
    a = g.to_dense()
    acc = np.linalg.matrix_power(a, p)
    acc = (acc != 0).astype(float)
    np.fill_diagonal(acc, 0.0)
    return acc


class TestSparseGraph:
    def test_from_edges_symmetrizes_and_dedupes(self):
        g = SparseGraph.from_edges(3, [(0, 1), (1, 0), (0, 1), (1, 2)])
        assert g.num_edges == 4
        assert np.array_equal(g.neighbors(1), [0, 2])

    def test_self_loops_dropped(self):
        g = SparseGraph.from_edges(3, [(0, 0), (0, 1)])
        assert g.num_edges == 2
        assert np.all(np.diag(g.to_dense()) == 0)

    def test_out_of_range_edge_rejected(self):
        with pytest.raises(GraphError):
            SparseGraph.from_edges(2, [(0, 5)])

    def test_from_dense_requires_symmetry(self):
        with pytest.raises(GraphError):
            SparseGraph.from_dense([[0, 1], [0, 0]])

    def test_arrays_are_frozen(self):
        g = path_graph(3)
        with pytest.raises(ValueError):
            g.col_indices[0] = 5

    def test_empty_graph(self):
        g = SparseGraph.from_edges(4, [])
        assert g.num_edges == 0
        assert degrees(g).tolist() == [0, 0, 0, 0]


class TestGraphPower:
    def test_identity_case(self):
        g = path_graph(3)
        assert graph_power(g, 1) is g

    def test_path_squared_connects_endpoints(self):
        g2 = graph_power(path_graph(3), 2)
        assert g2.to_dense().tolist() == [[0, 0, 1], [0, 0, 0], [1, 0, 0]]

    def test_triangle_squared_is_triangle(self):
        tri = SparseGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
        assert np.array_equal(graph_power(tri, 2).to_dense(), tri.to_dense())

    def test_power_zero_rejected(self):
        with pytest.raises(GraphError):
            graph_power(path_graph(3), 0)

    def test_edge_budget_guard(self):
        star = SparseGraph.from_edges(40, [(0, i) for i in range(1, 40)])
        with pytest.raises(GraphError, match="edge budget"):
            graph_power(star, 2, max_edge_growth=2.0)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            g = random_graph(rng, int(rng.integers(2, 30)), 0.3)
            for p in (1, 2, 3):
                got = graph_power(g, p, max_edge_growth=1e9).to_dense()
                assert np.array_equal(got, dense_power_oracle(g, p))


class TestInducedSubgraph:
    def test_full_selection_is_identity(self):
        g = path_graph(5)
        sel = NodeSelection.from_indices(range(5), 5)
        assert np.array_equal(induced_subgraph(g, sel).to_dense(), g.to_dense())

    def test_triangle_pair(self):
        tri = SparseGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
        child = induced_subgraph(tri, NodeSelection.from_indices([0, 2], 3))
        assert child.to_dense().tolist() == [[0, 1], [1, 0]]

    def test_path_endpoints_disconnect(self):
        child = induced_subgraph(
            path_graph(4), NodeSelection.from_indices([0, 3], 4)
        )
        assert child.num_edges == 0

    def test_empty_selection_rejected(self):
        with pytest.raises(GraphError):
            NodeSelection.from_indices([], 4)

    def test_dense_gather_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            n = int(rng.integers(2, 64))
            g = random_graph(rng, n, 0.25)
            k = int(rng.integers(1, n + 1))
            sel = NodeSelection.from_indices(
                rng.choice(n, size=k, replace=False), n
            )
            got = induced_subgraph(g, sel).to_dense()
            want = g.to_dense()[np.ix_(sel.indices, sel.indices)]
            assert np.array_equal(got, want)

    def test_preserves_invariants_and_never_gains_edges(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = int(rng.integers(3, 50))
            g = random_graph(rng, n, 0.3)
            k = int(rng.integers(1, n))
            sel = NodeSelection.from_indices(rng.choice(n, size=k, replace=False), n)
            child = induced_subgraph(g, sel)
            child.validate()
            assert child.num_edges <= g.num_edges


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 24), st.integers(1, 3), st.randoms(use_true_random=False))
def test_power_then_gather_equals_dense_reference(n, p, pyrandom):
    rng = np.random.default_rng(pyrandom.randrange(2**32))
    g = random_graph(rng, n, 0.3)
    k = int(rng.integers(1, n + 1))
    sel = NodeSelection.from_indices(rng.choice(n, size=k, replace=False), n)
    got = induced_subgraph(graph_power(g, p, max_edge_growth=1e9), sel).to_dense()
    want = dense_power_oracle(g, p)[np.ix_(sel.indices, sel.indices)]
    assert np.array_equal(got, want)


class TestRestrict:
    def setup_method(self):
        self.x = np.arange(12, dtype=float).reshape(4, 3)
        self.y = LabelVector(np.array([0, 1, 0, 1]), 2)
        self.masks = Masks(
            np.array([True, True, False, False]),
            np.array([False, False, True, False]),
            np.array([False, False, False, True]),
        )

    def test_full_selection_unchanged(self):
        sel = NodeSelection.from_indices(range(4), 4)
        x2, y2, m2 = restrict(self.x, self.y, self.masks, sel)
        assert np.array_equal(x2, self.x)
        assert np.array_equal(y2.labels, self.y.labels)
        assert np.array_equal(m2.train, self.masks.train)

    def test_row_gather(self):
        sel = NodeSelection.from_indices([1, 3], 4)
        x2, y2, _ = restrict(self.x, self.y, self.masks, sel)
        assert np.array_equal(x2, self.x[[1, 3]])
        assert y2.labels.tolist() == [1, 1]

    def test_mask_gather_child_indexing(self):
        sel = NodeSelection.from_indices([1, 3], 4)
        _, _, m2 = restrict(self.x, self.y, self.masks, sel)
        # parent train nodes {0, 1}; child keeps parent node 1 as child node 0
        assert m2.train.tolist() == [True, False]
        assert m2.test.tolist() == [False, True]


class TestDegrees:
    def test_star(self):
        g = SparseGraph.from_edges(5, [(0, i) for i in range(1, 5)])
        assert degrees(g).tolist() == [4, 1, 1, 1, 1]

    def test_path(self):
        assert degrees(path_graph(3)).tolist() == [1, 2, 1]

    def test_sum_equals_num_edges(self):
        g = random_graph(np.random.default_rng(3), 30, 0.2)
        assert int(degrees(g).sum()) == g.num_edges


class TestFlopFormula:
    @pytest.mark.parametrize(
        "edges,nodes,cin,cout,expected",
        [(10, 5, 3, 2, 90), (0, 5, 3, 2, 30), (10, 0, 3, 2, 60)],
    )
    def test_values(self, edges, nodes, cin, cout, expected):
        assert gcn_layer_flops(edges, nodes, cin, cout) == expected

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            gcn_layer_flops(-1, 5, 3, 2)
