"""Sparse graph core: CSR adjacency, graph powers, induced subgraphs, FLOP model.

Graphs are binary, undirected, without self-loops, stored in CSR form.
``num_edges`` counts directed entries, so every undirected edge contributes 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Raised on invalid graph structure or operations."""


@dataclass(frozen=True)
class SparseGraph:
    """Immutable symmetric binary adjacency in CSR form (no self-loops)."""

    num_nodes: int
    row_offsets: np.ndarray  # int64, length num_nodes + 1
    col_indices: np.ndarray  # int64, sorted within each row

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        ro.setflags(write=False)
        ci.setflags(write=False)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)

    @property
    def num_edges(self) -> int:
        """Directed entry count (undirected edge counted twice)."""
        return int(self.col_indices.shape[0])

    @property
    def num_undirected_edges(self) -> int:
        return self.num_edges // 2

    @classmethod
    def from_edges(cls, num_nodes: int, edges) -> "SparseGraph":
        """Build from (u, v) pairs; symmetrizes, dedupes, drops self-loops."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            raise GraphError("edge endpoint out of range")
        keep = edges[:, 0] != edges[:, 1]
        edges = edges[keep]
        if edges.shape[0] == 0:
            ro = np.zeros(num_nodes + 1, dtype=np.int64)
            return cls(num_nodes, ro, np.empty(0, dtype=np.int64))
        both = np.concatenate([edges, edges[:, ::-1]])
        m = sp.coo_matrix(
            (np.ones(both.shape[0]), (both[:, 0], both[:, 1])),
            shape=(num_nodes, num_nodes),
        ).tocsr()
        m.sum_duplicates()
        return cls._from_binary_csr(m)

    @classmethod
    def from_dense(cls, adj) -> "SparseGraph":
        adj = np.asarray(adj)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise GraphError("adjacency must be square")
        if not np.array_equal(adj, adj.T):
            raise GraphError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise GraphError("self-loops are not allowed")
        return cls._from_binary_csr(sp.csr_matrix(adj != 0))

    @classmethod
    def _from_binary_csr(cls, m: sp.csr_matrix) -> "SparseGraph":
        m = sp.csr_matrix(m, copy=True)
        m.setdiag(0)
        m.eliminate_zeros()
        m.data[:] = 1.0
        m.sort_indices()
        g = cls(
            m.shape[0],
            m.indptr.astype(np.int64),
            m.indices.astype(np.int64),
        )
        g.validate()
        return g

    def validate(self) -> None:
        n = self.num_nodes
        ro, ci = self.row_offsets, self.col_indices
        if ro.shape != (n + 1,) or ro[0] != 0 or ro[-1] != ci.shape[0]:
            raise GraphError("malformed row offsets")
        counts = np.diff(ro)
        if np.any(counts < 0):
            raise GraphError("row offsets must be nondecreasing")
        if ci.size:
            if ci.min() < 0 or ci.max() >= n:
                raise GraphError("column index out of range")
            row_of = np.repeat(np.arange(n, dtype=np.int64), counts)
            if np.any(ci == row_of):
                raise GraphError("self-loop stored")
            interior = np.ones(ci.shape[0], dtype=bool)
            starts = ro[1:-1]
            interior[starts[starts < ci.shape[0]]] = False  # row-first entries
            if np.any(np.diff(ci)[interior[1:]] <= 0):
                raise GraphError("row column indices not strictly increasing")
        m = self.csr
        if (m != m.T).nnz != 0:
            raise GraphError("adjacency must be symmetric")

    @cached_property
    def csr(self) -> sp.csr_matrix:
        """Raw adjacency as a float64 scipy CSR matrix."""
        m = sp.csr_matrix(
            (
                np.ones(self.num_edges, dtype=np.float64),
                self.col_indices.copy(),
                self.row_offsets.copy(),
            ),
            shape=(self.num_nodes, self.num_nodes),
        )
        m.has_sorted_indices = True
        return m

    @cached_property
    def normalized_csr(self) -> sp.csr_matrix:
        """Symmetric normalization with self-loops: D̃^{-1/2}(A+I)D̃^{-1/2}."""
        a_hat = self.csr + sp.identity(self.num_nodes, format="csr")
        deg = np.asarray(a_hat.sum(axis=1)).ravel()
        inv_sqrt = 1.0 / np.sqrt(deg)
        d = sp.diags(inv_sqrt)
        return (d @ a_hat @ d).tocsr()

    def neighbors(self, i: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[i] : self.row_offsets[i + 1]]

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()


@dataclass(frozen=True)
class NodeSelection:
    """Sorted unique node indices into a parent graph.

    Index form of a binary injection matrix P: column j is the indicator of
    parent node ``indices[j]``, so child node j corresponds to parent node
    ``indices[j]``.
    """

    indices: np.ndarray  # int64, strictly increasing

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_indices(cls, indices, parent_size: int | None = None) -> "NodeSelection":
        idx = np.asarray(indices, dtype=np.int64).ravel()
        if idx.size == 0:
            raise GraphError("selection must be nonempty")
        idx = np.unique(idx)
        if idx[0] < 0:
            raise GraphError("selection index negative")
        if parent_size is not None and idx[-1] >= parent_size:
            raise GraphError("selection index exceeds parent size")
        return cls(idx)

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    def compose(self, child: "NodeSelection") -> "NodeSelection":
        """Map a selection of this selection back to the original indexing."""
        if child.indices[-1] >= len(self):
            raise GraphError("child selection exceeds parent selection size")
        return NodeSelection(self.indices[child.indices])

    def validate_against(self, g: SparseGraph) -> None:
        if self.indices[-1] >= g.num_nodes:
            raise GraphError("selection index exceeds graph size")


@dataclass(frozen=True)
class LabelVector:
    """Per-node class indices in [0, num_classes)."""

    labels: np.ndarray  # int64
    num_classes: int

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int64)
        if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
            raise GraphError("label out of range")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass(frozen=True)
class Masks:
    """Boolean train/val/test node masks."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            m = np.ascontiguousarray(getattr(self, name), dtype=bool)
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        if not (self.train.shape == self.val.shape == self.test.shape):
            raise GraphError("mask shapes differ")


@dataclass(frozen=True)
class Coordinates:
    """Optional n × d node positions."""

    points: np.ndarray  # float64

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise GraphError("coordinates must be n × d with d ≥ 1")
        if not np.all(np.isfinite(pts)):
            raise GraphError("coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class GraphData:
    """One scale of a node-classification problem."""

    graph: SparseGraph
    x: np.ndarray  # float64 features, shape (n, c)
    y: LabelVector
    masks: Masks
    coords: Coordinates | None = None

    def __post_init__(self):
        n = self.graph.num_nodes
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != n:
            raise GraphError("feature matrix shape mismatch")
        if not np.all(np.isfinite(x)):
            raise GraphError("features must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if len(self.y) != n or self.masks.train.shape[0] != n:
            raise GraphError("labels/masks length mismatch")
        if self.coords is not None and self.coords.points.shape[0] != n:
            raise GraphError("coordinates length mismatch")

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes


def graph_power(g: SparseGraph, p: int, max_edge_growth: float = 32.0) -> SparseGraph:
    """Boolean p-th power of the adjacency, diagonal zeroed.

    An edge (i, j), i != j, exists in the result iff some walk of length
    exactly p connects i to j in g.  p = 1 returns g unchanged.  Aborts if
    the result would exceed ``max_edge_growth`` times the input edge count:
    raising connectivity only pays off while the powered matrix stays sparse.
    """
    if p < 1:
        raise GraphError("power must be >= 1")
    if p == 1:
        return g
    budget = max_edge_growth * max(g.num_edges, 1)
    base = g.csr
    acc = base.copy()
    for _ in range(p - 1):
        acc = acc @ base
        # Binarize walk counts; the boolean semiring product is unaffected.
        # The diagonal must survive intermediate steps (walks may revisit
        # their start node) and is zeroed only in the final result.
        acc.data[:] = 1.0
        if acc.nnz > budget + g.num_nodes:
            raise GraphError(
                f"graph power {p} exceeds edge budget "
                f"({acc.nnz} nonzeros > {max_edge_growth} x {g.num_edges} edges)"
            )
    result = SparseGraph._from_binary_csr(acc)
    if result.num_edges > budget:
        raise GraphError(
            f"graph power {p} exceeds edge budget "
            f"({result.num_edges} > {max_edge_growth} x {g.num_edges})"
        )
    return result


def induced_subgraph(g: SparseGraph, sel: NodeSelection) -> SparseGraph:
    """Subgraph on sel: child edge (a, b) iff (sel[a], sel[b]) is an edge of g."""
    sel.validate_against(g)
    sub = g.csr[sel.indices][:, sel.indices]
    return SparseGraph._from_binary_csr(sp.csr_matrix(sub))


def restrict(
    x: np.ndarray, y: LabelVector, masks: Masks, sel: NodeSelection
) -> tuple[np.ndarray, LabelVector, Masks]:
    """Row-gather features, labels, and masks by a node selection."""
    idx = sel.indices
    if idx[-1] >= x.shape[0]:
        raise GraphError("selection exceeds data size")
    return (
        x[idx],
        LabelVector(y.labels[idx], y.num_classes),
        Masks(masks.train[idx], masks.val[idx], masks.test[idx]),
    )


def restrict_data(data: GraphData, sel: NodeSelection, p: int = 1,
                  max_edge_growth: float = 32.0) -> GraphData:
    """Coarsen a full problem: power, induce the subgraph, gather rows."""
    powered = graph_power(data.graph, p, max_edge_growth=max_edge_growth)
    child_graph = induced_subgraph(powered, sel)
    cx, cy, cm = restrict(data.x, data.y, data.masks, sel)
    coords = None
    if data.coords is not None:
        coords = Coordinates(data.coords.points[sel.indices])
    return GraphData(child_graph, cx, cy, cm, coords)


def degrees(g: SparseGraph) -> np.ndarray:
    """Per-node degree; sums to num_edges."""
    return np.diff(g.row_offsets)


def gcn_layer_flops(num_edges: int, num_nodes: int, c_in: int, c_out: int) -> int:
    """Multiply count of one propagation layer: 2·|E|·c_in + |V|·c_in·c_out.

    ``num_edges`` is the undirected edge count |E|; the sparse aggregation
    A·X touches each directed entry once, hence the factor 2.
    """
    if min(num_edges, num_nodes, c_in, c_out) < 0:
        raise ValueError("flop model arguments must be nonnegative")
    return 2 * num_edges * c_in + num_nodes * c_in * c_out
