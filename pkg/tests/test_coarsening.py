"""Selection policies and hierarchy construction."""

import numpy as np
import pytest

from msgnn.coarsening import (
    CoarsenError,
    CoarsenPlan,
    build_hierarchy,
    default_ego_hops,
    ego_select,
    nearest_select,
    random_select,
    topk_select,
)
from msgnn.datasets import gen_sbm
from msgnn.graphs import (
    Coordinates,
    GraphData,
    LabelVector,
    Masks,
    SparseGraph,
)


def path_graph(n):
    return SparseGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def toy_data(n=8, classes=2, coords=False):
    g = path_graph(n)
    x = np.eye(n)[:, :3].astype(float)
    y = LabelVector(np.arange(n) % classes, classes)
    masks = Masks(np.ones(n, bool), np.zeros(n, bool), np.zeros(n, bool))
    c = Coordinates(np.stack([np.arange(n, dtype=float), np.zeros(n)], axis=1)) if coords else None
    return GraphData(g, x, y, masks, c)


class TestRandomSelect:
    def test_select_all(self):
        sel = random_select(5, 5, np.random.default_rng(0))
        assert sel.indices.tolist() == [0, 1, 2, 3, 4]

    def test_singleton_in_range(self):
        sel = random_select(5, 1, np.random.default_rng(1))
        assert len(sel) == 1 and 0 <= sel.indices[0] < 5

    def test_zero_rejected(self):
        with pytest.raises(CoarsenError):
            random_select(5, 0, np.random.default_rng(0))

    def test_seeded_replay(self):
        a = random_select(10, 4, np.random.default_rng(42))
        b = random_select(10, 4, np.random.default_rng(42))
        assert np.array_equal(a.indices, b.indices)
        assert len(np.unique(a.indices)) == 4


class TestTopkSelect:
    def test_star_center(self):
        g = SparseGraph.from_edges(5, [(0, i) for i in range(1, 5)])
        assert topk_select(g, 1).indices.tolist() == [0]

    def test_path_middle_nodes(self):
        # degrees [1, 2, 2, 1] on a 4-path
        assert topk_select(path_graph(4), 2).indices.tolist() == [1, 2]

    def test_tie_break_by_lower_index(self):
        cycle = SparseGraph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
        assert topk_select(cycle, 2).indices.tolist() == [0, 1]


class TestEgoSelect:
    def test_one_hop(self):
        assert ego_select(path_graph(5), 2, 1).indices.tolist() == [1, 2, 3]

    def test_zero_hops(self):
        assert ego_select(path_graph(5), 2, 0).indices.tolist() == [2]

    def test_saturation(self):
        assert ego_select(path_graph(5), 2, 10).indices.tolist() == [0, 1, 2, 3, 4]


class TestNearestSelect:
    def setup_method(self):
        self.coords = Coordinates(np.array([[0.0, 0], [1, 0], [2, 0]]))

    def test_two_nearest_from_end(self):
        assert nearest_select(self.coords, 0, 2).indices.tolist() == [0, 1]

    def test_all(self):
        assert nearest_select(self.coords, 0, 3).indices.tolist() == [0, 1, 2]

    def test_middle_root(self):
        assert nearest_select(self.coords, 1, 3).indices.tolist() == [0, 1, 2]

    def test_missing_coords_rejected(self):
        with pytest.raises(CoarsenError):
            nearest_select(None, 0, 1)


class TestBuildHierarchy:
    def test_single_level_is_original(self):
        data = toy_data()
        h = build_hierarchy(data, CoarsenPlan(levels=1))
        assert h.R == 1
        assert h[0].data is data

    def test_ratio_arithmetic(self):
        data = gen_sbm(64, 4, 0.3, 0.05, seed=0)
        h = build_hierarchy(data, CoarsenPlan(levels=3, ratio=0.5, seed=0))
        assert h.node_counts() == [64, 32, 16]

    def test_node_counts_strictly_decrease(self):
        data = gen_sbm(100, 4, 0.2, 0.02, seed=1)
        for policy in ("random", "topk", "nearest"):
            if policy == "nearest":
                data_c = GraphData(
                    data.graph, data.x, data.y, data.masks,
                    Coordinates(np.random.default_rng(0).random((100, 2))),
                )
                h = build_hierarchy(data_c, CoarsenPlan(levels=4, policy=policy, seed=2))
            else:
                h = build_hierarchy(data, CoarsenPlan(levels=4, policy=policy, seed=2))
            counts = h.node_counts()
            assert all(a > b for a, b in zip(counts, counts[1:]))

    def test_composed_selections_injective_and_valid(self):
        data = gen_sbm(80, 4, 0.2, 0.02, seed=3)
        h = build_hierarchy(data, CoarsenPlan(levels=4, seed=4))
        for level in h.levels[1:]:
            idx = level.selection.indices
            assert len(np.unique(idx)) == len(idx)
            assert idx.max() < 80

    def test_ego_hierarchy_nested(self):
        data = toy_data(n=32)
        h = build_hierarchy(
            data, CoarsenPlan(levels=3, policy="ego", ego_hops=(6, 3), seed=5)
        )
        sets = [set(level.selection.indices.tolist()) for level in h.levels]
        assert sets[2] <= sets[1] <= sets[0]

    def test_ego_selection_features_match_parent_rows(self):
        data = toy_data(n=32)
        h = build_hierarchy(
            data, CoarsenPlan(levels=2, policy="ego", ego_hops=(4,), seed=6)
        )
        level = h[1]
        assert np.array_equal(level.data.x, data.x[level.selection.indices])

    def test_hybrid_alternates_random_first(self):
        data = gen_sbm(128, 4, 0.2, 0.02, seed=7)
        h = build_hierarchy(
            data, CoarsenPlan(levels=4, policy="hybrid", ego_hops=(9, 9, 9), seed=8)
        )
        assert [lv.policy for lv in h.levels] == ["identity", "random", "ego", "random"]

    def test_coarse_train_masks_nonempty(self):
        data = gen_sbm(64, 4, 0.2, 0.02, seed=9)
        h = build_hierarchy(data, CoarsenPlan(levels=4, seed=10))
        for level in h.levels:
            assert level.data.masks.train.any()

    def test_retry_exhaustion_names_level(self):
        # topk is deterministic: an empty coarse train mask cannot be retried away
        n = 8
        g = SparseGraph.from_edges(n, [(0, i) for i in range(1, n)])
        masks = Masks(
            np.eye(n, dtype=bool)[7], np.zeros(n, bool), np.zeros(n, bool)
        )
        # only node 7 is a train node; topk keeps the hub and low-index leaves
        data = GraphData(g, np.ones((n, 2)), LabelVector(np.zeros(n, np.int64), 1), masks)
        with pytest.raises(CoarsenError, match="level 2"):
            build_hierarchy(data, CoarsenPlan(levels=2, ratio=0.5, policy="topk"))

    def test_plan_validation(self):
        with pytest.raises(CoarsenError):
            CoarsenPlan(levels=0)
        with pytest.raises(CoarsenError):
            CoarsenPlan(ratio=1.0)
        with pytest.raises(CoarsenError):
            CoarsenPlan(policy="magic")
        with pytest.raises(CoarsenError):
            CoarsenPlan(levels=3, power=(1, 2, 3))  # needs levels-1 entries

    def test_default_ego_hops_schedule(self):
        assert default_ego_hops(4) == [6, 4, 2]
        assert default_ego_hops(3) == [4, 2]
        assert default_ego_hops(2) == [2]


def test_random_policy_edge_fraction_statistics():
    """With ratio m and p=1, coarse edges concentrate near m^2 of the parent."""
    data = gen_sbm(128, 4, 0.25, 0.05, feature_noise=0.5, seed=11)
    parent_edges = data.graph.num_undirected_edges
    m = 0.5
    fractions = []
    for seed in range(100):
        h = build_hierarchy(data, CoarsenPlan(levels=2, ratio=m, seed=seed))
        fractions.append(h[1].data.graph.num_undirected_edges / parent_edges)
    mean = float(np.mean(fractions))
    assert 0.5 * m**2 <= mean <= 2.0 * m**2
