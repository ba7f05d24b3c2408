"""Node-selection policies and multiscale hierarchy construction.

A hierarchy holds R scales of one node-classification problem.  Scale 1 is
the original data; scale r+1 is derived from scale r by selecting nodes
(random / top-degree / ego-network / nearest-by-distance / hybrid), raising
the scale-r adjacency to a power p, inducing the subgraph on the selection,
and row-gathering features, labels, and masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import (
    Coordinates,
    GraphData,
    GraphError,
    NodeSelection,
    SparseGraph,
    degrees,
    restrict_data,
)

POLICIES = ("random", "topk", "ego", "nearest", "hybrid")

MASK_RETRIES = 16


class CoarsenError(GraphError):
    """Raised when a usable hierarchy cannot be built."""


def random_select(n: int, m_target: int, rng: np.random.Generator) -> NodeSelection:
    """m_target uniform without-replacement node indices, sorted."""
    if m_target <= 0:
        raise CoarsenError("selection size must be positive")
    if m_target > n:
        raise CoarsenError(f"cannot select {m_target} of {n} nodes")
    idx = rng.choice(n, size=m_target, replace=False)
    return NodeSelection(np.sort(idx.astype(np.int64)))


def topk_select(g: SparseGraph, m_target: int) -> NodeSelection:
    """The m_target highest-degree nodes; ties broken by lower node index."""
    if m_target <= 0 or m_target > g.num_nodes:
        raise CoarsenError(f"cannot select {m_target} of {g.num_nodes} nodes")
    deg = degrees(g)
    order = np.lexsort((np.arange(g.num_nodes), -deg))
    return NodeSelection(np.sort(order[:m_target]))


def ego_select(g: SparseGraph, root: int, k: int) -> NodeSelection:
    """BFS ball of radius k around root, root included."""
    if not 0 <= root < g.num_nodes:
        raise CoarsenError(f"root {root} out of range")
    if k < 0:
        raise CoarsenError("hop count must be nonnegative")
    visited = np.zeros(g.num_nodes, dtype=bool)
    visited[root] = True
    frontier = np.array([root], dtype=np.int64)
    for _ in range(k):
        if frontier.size == 0:
            break
        nxt = np.unique(
            np.concatenate([g.neighbors(int(u)) for u in frontier])
            if frontier.size
            else np.empty(0, dtype=np.int64)
        )
        nxt = nxt[~visited[nxt]]
        visited[nxt] = True
        frontier = nxt
    return NodeSelection(np.flatnonzero(visited).astype(np.int64))


def nearest_select(coords: Coordinates, root: int, m_target: int) -> NodeSelection:
    """Root plus its m_target - 1 Euclidean-nearest nodes; ties by lower index."""
    if coords is None:
        raise CoarsenError("nearest selection requires coordinates")
    pts = coords.points
    n = pts.shape[0]
    if not 0 <= root < n:
        raise CoarsenError(f"root {root} out of range")
    if m_target <= 0 or m_target > n:
        raise CoarsenError(f"cannot select {m_target} of {n} nodes")
    dist = np.linalg.norm(pts - pts[root], axis=1)
    order = np.lexsort((np.arange(n), dist))
    order = order[order != root][: m_target - 1]
    chosen = np.concatenate([[root], order])
    return NodeSelection(np.sort(chosen.astype(np.int64)))


def default_ego_hops(levels: int) -> list[int]:
    """Decreasing hop radii toward coarser scales, e.g. [6, 4, 2] for 4 levels."""
    return [2 * (levels - r + 1) for r in range(2, levels + 1)]


@dataclass(frozen=True)
class CoarsenPlan:
    """How to derive scales 2..R from the original data."""

    levels: int = 1
    ratio: float = 0.5
    power: int | tuple[int, ...] = 1
    policy: str = "random"
    ego_hops: tuple[int, ...] | None = None
    seed: int = 0
    max_edge_growth: float = 32.0

    def __post_init__(self):
        if self.levels < 1:
            raise CoarsenError("levels must be >= 1")
        if not 0.0 < self.ratio < 1.0:
            raise CoarsenError("ratio must be in (0, 1)")
        if self.policy not in POLICIES:
            raise CoarsenError(f"unknown policy {self.policy!r}")
        powers = self.powers_per_level()
        if any(p < 1 for p in powers):
            raise CoarsenError("power must be >= 1")
        hops = self.hops_per_level()
        if any(k < 0 for k in hops):
            raise CoarsenError("ego hops must be nonnegative")

    def powers_per_level(self) -> list[int]:
        steps = max(self.levels - 1, 0)
        if isinstance(self.power, int):
            return [self.power] * steps
        if len(self.power) != steps:
            raise CoarsenError(f"need {steps} per-level powers, got {len(self.power)}")
        return list(self.power)

    def hops_per_level(self) -> list[int]:
        steps = max(self.levels - 1, 0)
        if self.ego_hops is None:
            return default_ego_hops(self.levels)
        if len(self.ego_hops) != steps:
            raise CoarsenError(f"need {steps} per-level hops, got {len(self.ego_hops)}")
        return list(self.ego_hops)

    def policy_for_step(self, step: int) -> str:
        """Policy used to build level step+2 from level step+1.

        Hybrid alternates, random first: random on even levels, ego on odd.
        """
        if self.policy != "hybrid":
            return self.policy
        level_built = step + 2
        return "random" if level_built % 2 == 0 else "ego"


@dataclass(frozen=True)
class Level:
    """One scale: its data plus the selection composed back to scale 1."""

    data: GraphData
    selection: NodeSelection  # global: indices into the original graph
    local_selection: NodeSelection | None  # indices into the parent level
    policy: str
    power: int

    @property
    def num_nodes(self) -> int:
        return self.data.num_nodes


@dataclass(frozen=True)
class LevelHierarchy:
    """Ordered scales; levels[0] is the original problem."""

    levels: tuple[Level, ...]

    @property
    def R(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> Level:
        return self.levels[i]

    def coarse_to_fine(self):
        return reversed(self.levels)

    def node_counts(self) -> list[int]:
        return [lv.num_nodes for lv in self.levels]


def _select_once(
    parent: GraphData,
    policy: str,
    m_target: int,
    hops: int,
    rng: np.random.Generator,
) -> NodeSelection:
    n = parent.num_nodes
    if policy == "random":
        return random_select(n, m_target, rng)
    if policy == "topk":
        return topk_select(parent.graph, m_target)
    if policy == "ego":
        root = int(rng.integers(n))
        return ego_select(parent.graph, root, hops)
    if policy == "nearest":
        root = int(rng.integers(n))
        return nearest_select(parent.coords, root, m_target)
    raise CoarsenError(f"unknown policy {policy!r}")


def build_hierarchy(data: GraphData, plan: CoarsenPlan) -> LevelHierarchy:
    """Recursively coarsen; retries a level up to 16 times if its train mask
    comes up empty (possible for random draws and subgraph roots)."""
    identity = NodeSelection(np.arange(data.num_nodes, dtype=np.int64))
    levels = [Level(data, identity, None, "identity", 1)]
    rng = np.random.default_rng(plan.seed)
    powers = plan.powers_per_level()
    hops = plan.hops_per_level()

    for step in range(plan.levels - 1):
        parent = levels[-1]
        policy = plan.policy_for_step(step)
        n = parent.num_nodes
        if policy in ("random", "topk", "nearest"):
            if n <= 1:
                raise CoarsenError(f"level {step + 2}: cannot shrink a 1-node graph")
            m_target = min(max(1, int(round(plan.ratio * n))), n - 1)
        else:
            m_target = 0  # hop-driven

        child = None
        for attempt in range(MASK_RETRIES):
            sel = _select_once(parent.data, policy, m_target, hops[step], rng)
            candidate = restrict_data(
                parent.data, sel, p=powers[step], max_edge_growth=plan.max_edge_growth
            )
            if candidate.masks.train.any():
                child = (sel, candidate)
                break
        if child is None:
            raise CoarsenError(
                f"level {step + 2}: empty train mask after {MASK_RETRIES} retries"
            )
        sel, candidate = child
        # Hop-driven scales may saturate (no shrink); ratio-driven must shrink.
        if policy != "ego" and candidate.num_nodes >= n:
            raise CoarsenError(f"level {step + 2}: did not shrink")
        levels.append(
            Level(
                candidate,
                levels[-1].selection.compose(sel),
                sel,
                policy,
                powers[step],
            )
        )
    return LevelHierarchy(tuple(levels))
