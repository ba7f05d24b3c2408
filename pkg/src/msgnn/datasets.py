"""Synthetic desk-scale datasets: rod clouds, SBM graphs, kNN point clouds.

The rod dataset embeds short path graphs ("rods") in a kNN-connected grid
cloud.  Only rod endpoints carry a color feature; a rod's class depends on
the colors of BOTH endpoints, so classifying interior rod nodes requires a
receptive field spanning the rod.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import Coordinates, GraphData, GraphError, LabelVector, Masks, SparseGraph

# feature channels: [blue endpoint, yellow endpoint, plain]
BLUE = np.array([1.0, 0.0, 0.0])
YELLOW = np.array([0.0, 1.0, 0.0])
PLAIN = np.array([0.0, 0.0, 1.0])

# labels: 0 background, 1 blue/blue rod, 2 yellow/yellow rod, 3 mismatched rod
QTIPS_CLASSES = 4

_DIRS = ((0, 1), (1, 0), (1, 1), (1, -1))  # axis-aligned and 45 degrees


class DatasetError(GraphError):
    """Raised when a generator cannot satisfy its spec."""


@dataclass(frozen=True)
class QtipsSpec:
    """Rod-cloud generator parameters.

    Background nodes are a random ``background_density`` fraction of the grid
    cells left free by rod placement; a sparse background keeps the rod
    fraction high enough for plain NLL training to see the minority classes.
    """

    num_graphs: int = 10
    grid_side: int = 16
    rod_length: int = 7
    rods_per_graph: int = 10
    knn_k: int = 4
    background_density: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.rod_length < 2:
            raise DatasetError("rods need at least two nodes (two endpoints)")
        if self.grid_side < self.rod_length:
            raise DatasetError("rod does not fit in the grid")
        if self.knn_k < 2:
            raise DatasetError("background connectivity needs k >= 2")
        if self.num_graphs < 1 or self.rods_per_graph < 1:
            raise DatasetError("need at least one graph and one rod")
        if self.rods_per_graph * self.rod_length > self.grid_side**2:
            raise DatasetError("more rod cells than grid cells")
        if not 0.0 < self.background_density <= 1.0:
            raise DatasetError("background_density must lie in (0, 1]")


def knn_edges(
    points: np.ndarray, k: int, group: np.ndarray | None = None
) -> np.ndarray:
    """Directed kNN pairs with deterministic (distance, index) tie-breaking.

    When ``group`` is given, pairs inside the same nonnegative group are
    skipped (used to stop rods from growing chord edges between their own
    cells: rod connectivity must stay the path, or shallow receptive fields
    could reach both endpoints).
    """
    n = points.shape[0]
    if k >= n:
        raise DatasetError(f"k = {k} needs more than k points, got {n}")
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
    pairs = []
    idx = np.arange(n)
    for i in range(n):
        order = np.lexsort((idx, d2[i]))
        order = order[order != i]
        if group is not None and group[i] >= 0:
            order = order[group[order] != group[i]]
        pairs.extend((i, int(j)) for j in order[:k])
    return np.array(pairs, dtype=np.int64)


def gen_knn_cloud(
    n: int, d: int, k: int, seed: int = 0
) -> tuple[SparseGraph, Coordinates]:
    """Uniform points in [0,1]^d with a symmetrized kNN graph."""
    rng = np.random.default_rng(seed)
    points = rng.random((n, d))
    g = SparseGraph.from_edges(n, knn_edges(points, k))
    return g, Coordinates(points)


def gen_sbm(
    n: int,
    blocks: int,
    p_in: float,
    p_out: float,
    feature_noise: float = 1.0,
    seed: int = 0,
) -> GraphData:
    """Stochastic block model with block-indicator features plus noise.

    Labels are block ids; masks split nodes 60/20/20 uniformly at random.
    """
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise DatasetError("edge probabilities must lie in [0, 1]")
    if blocks < 1 or n < blocks:
        raise DatasetError("need at least one node per block")
    rng = np.random.default_rng(seed)
    labels = np.concatenate(
        [np.full(len(part), b) for b, part in enumerate(np.array_split(np.arange(n), blocks))]
    )
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    draw = rng.random((n, n))
    upper = np.triu(draw < prob, k=1)
    u, v = np.nonzero(upper)
    g = SparseGraph.from_edges(n, np.stack([u, v], axis=1))

    x = np.zeros((n, blocks))
    x[np.arange(n), labels] = 1.0
    x += feature_noise * rng.standard_normal((n, blocks))

    perm = rng.permutation(n)
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[perm[:n_train]] = True
    val[perm[n_train : n_train + n_val]] = True
    test[perm[n_train + n_val :]] = True
    return GraphData(g, x, LabelVector(labels, blocks), Masks(train, val, test))


def _place_rod(
    side: int, length: int, occupied: np.ndarray, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """Place a rod uniformly among all runs keeping one empty cell to others."""
    span = length - 1
    candidates = []
    for dr, dc in _DIRS:
        r_hi = side - 1 - span * abs(dr)
        c_lo, c_hi = span * (dc < 0), side - 1 - span * (dc > 0)
        for r0 in range(0, r_hi + 1):
            for c0 in range(c_lo, c_hi + 1):
                cells = [(r0 + t * dr, c0 + t * dc) for t in range(length)]
                clear = all(
                    not occupied[
                        max(r - 1, 0) : r + 2, max(c - 1, 0) : c + 2
                    ].any()
                    for r, c in cells
                )
                if clear:
                    candidates.append(cells)
    if not candidates:
        raise DatasetError("no free cells left to place a rod")
    cells = candidates[rng.integers(len(candidates))]
    for r, c in cells:
        occupied[r, c] = True
    return cells


def _gen_one_qtips(spec: QtipsSpec, rng: np.random.Generator) -> GraphData:
    side = spec.grid_side
    occupied = np.zeros((side, side), dtype=bool)
    rods = [_place_rod(side, spec.rod_length, occupied, rng)
            for _ in range(spec.rods_per_graph)]

    free = [(r, c) for r in range(side) for c in range(side) if not occupied[r, c]]
    n_bg = max(spec.knn_k + 1, int(round(spec.background_density * len(free))))
    n_bg = min(n_bg, len(free))
    bg_idx = rng.choice(len(free), size=n_bg, replace=False)
    cells = [cell for rod in rods for cell in rod]
    cells += [free[i] for i in sorted(bg_idx)]
    index = {cell: i for i, cell in enumerate(cells)}

    n = len(cells)
    points = np.array(cells, dtype=np.float64)
    x = np.tile(PLAIN, (n, 1))
    labels = np.zeros(n, dtype=np.int64)
    rod_id = np.full(n, -1, dtype=np.int64)
    path_edges = []
    type_offset = int(rng.integers(3))  # rotate the cycle so types balance
    for rod_no, rod in enumerate(rods):
        nodes = [index[cell] for cell in rod]
        rod_id[nodes] = rod_no
        path_edges.extend(zip(nodes, nodes[1:]))
        rod_type = (rod_no + type_offset) % 3 + 1
        if rod_type == 1:
            ends = (BLUE, BLUE)
        elif rod_type == 2:
            ends = (YELLOW, YELLOW)
        else:
            ends = (BLUE, YELLOW) if rng.random() < 0.5 else (YELLOW, BLUE)
        x[nodes[0]] = ends[0]
        x[nodes[-1]] = ends[1]
        labels[nodes] = rod_type

    edges = np.concatenate(
        [knn_edges(points, spec.knn_k, group=rod_id),
         np.array(path_edges, dtype=np.int64)]
    )
    g = SparseGraph.from_edges(n, edges)
    all_train = Masks(np.ones(n, bool), np.zeros(n, bool), np.zeros(n, bool))
    return GraphData(
        g, x, LabelVector(labels, QTIPS_CLASSES), all_train, Coordinates(points)
    )


def gen_qtips(spec: QtipsSpec) -> list[GraphData]:
    """Generate ``num_graphs`` independent rod clouds (all nodes marked train)."""
    root = np.random.default_rng(spec.seed)
    return [_gen_one_qtips(spec, np.random.default_rng(s)) for s in
            root.integers(0, 2**63 - 1, size=spec.num_graphs)]


def merge_graphs(datasets: list[GraphData], roles: list[str]) -> GraphData:
    """Disjoint union with masks assigned from per-graph roles.

    A message-passing forward on the union equals independent forwards on
    the parts, so transductive training on the union is full-batch inductive
    training.  Coordinates are offset per graph so clouds do not overlap.
    """
    if len(datasets) != len(roles):
        raise DatasetError("one role per graph required")
    if any(role not in ("train", "val", "test") for role in roles):
        raise DatasetError("roles must be train/val/test")
    classes = {d.y.num_classes for d in datasets}
    channels = {d.x.shape[1] for d in datasets}
    if len(classes) != 1 or len(channels) != 1:
        raise DatasetError("graphs must share channel and class counts")
    has_coords = all(d.coords is not None for d in datasets)

    edges, xs, labels, coords = [], [], [], []
    masks = {"train": [], "val": [], "test": []}
    offset, coord_offset = 0, 0.0
    for data, role in zip(datasets, roles):
        n = data.num_nodes
        ro, ci = data.graph.row_offsets, data.graph.col_indices
        src = np.repeat(np.arange(n), np.diff(ro))
        edges.append(np.stack([src + offset, ci + offset], axis=1))
        xs.append(data.x)
        labels.append(data.y.labels)
        for name in masks:
            masks[name].append(
                np.ones(n, bool) if name == role else np.zeros(n, bool)
            )
        if has_coords:
            pts = data.coords.points.copy()
            pts[:, 0] += coord_offset
            coords.append(pts)
            coord_offset += float(pts[:, 0].max() - pts[:, 0].min()) + 3.0
        offset += n

    g = SparseGraph.from_edges(offset, np.concatenate(edges))
    return GraphData(
        g,
        np.concatenate(xs),
        LabelVector(np.concatenate(labels), classes.pop()),
        Masks(*(np.concatenate(masks[k]) for k in ("train", "val", "test"))),
        Coordinates(np.concatenate(coords)) if has_coords else None,
    )


def qtips_dataset(
    spec: QtipsSpec, train_graphs: int, val_graphs: int, test_graphs: int
) -> GraphData:
    """Rod corpus as one transductive problem split by whole graphs."""
    if train_graphs + val_graphs + test_graphs != spec.num_graphs:
        raise DatasetError("graph split must sum to num_graphs")
    if min(train_graphs, val_graphs, test_graphs) < 1:
        raise DatasetError("each split needs at least one graph")
    graphs = gen_qtips(spec)
    roles = (
        ["train"] * train_graphs + ["val"] * val_graphs + ["test"] * test_graphs
    )
    return merge_graphs(graphs, roles)
