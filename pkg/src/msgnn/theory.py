"""Linear least-squares study of coarse vs fine training on one graph.

For the identity-activation model problem (1/2N)·||A·X·theta - Y||², node
selection C splits the adjacency into blocks [[A_CC, A_CF], [A_FC, A_FF]].
Evaluating the coarse operator at any theta drops exactly A_CF·X_F·theta,
the cross-cut residual, which vanishes when no edge crosses the C/F cut.

The bound checked here compares the coarse objective at the sketched-problem
minimizer against (1 + eps)/2N times (fine optimal residual² + residual²).
The plain form relies on ||u + v||² <= ||u||² + ||v||², which is not a valid
general inequality, so the always-valid factor-2 variant is reported
alongside it.  Both inherit the subspace-embedding step empirically: uniform
node selection is not a sparse subspace embedding, so satisfaction rates are
reported rather than asserted.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .graphs import GraphError, NodeSelection, SparseGraph

RIDGE = 1e-10


class TheoryError(ValueError):
    """Raised on unsolvable or malformed least-squares problems."""


@dataclass(frozen=True)
class LinearLSProblem:
    """Fine problem plus the node subset C kept by the coarse problem."""

    graph: SparseGraph
    x: np.ndarray  # (n, c)
    y: np.ndarray  # (n, d)
    selection: NodeSelection

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        n = self.graph.num_nodes
        if x.shape[0] != n or y.shape[0] != n:
            raise TheoryError("feature/target rows must match the graph")
        self.selection.validate_against(self.graph)
        if len(self.selection) < x.shape[1]:
            raise TheoryError(
                "selection smaller than the channel count; coarse normal "
                "equations would be structurally rank-deficient"
            )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def complement(self) -> np.ndarray:
        mask = np.ones(self.graph.num_nodes, dtype=bool)
        mask[self.selection.indices] = False
        return np.flatnonzero(mask)


def ls_minimizer(
    design: np.ndarray, targets: np.ndarray, ridge_fallback: bool = True
) -> tuple[np.ndarray, bool]:
    """Normal-equations minimizer; returns (theta, used_ridge)."""
    design = np.asarray(design, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    if design.shape[0] != targets.shape[0]:
        raise TheoryError("design and target row counts differ")
    gram = design.T @ design
    rhs = design.T @ targets
    if np.linalg.matrix_rank(design) < design.shape[1]:
        if not ridge_fallback:
            raise TheoryError("design matrix is rank deficient")
        theta = np.linalg.solve(gram + RIDGE * np.eye(gram.shape[0]), rhs)
        return theta, True
    return np.linalg.solve(gram, rhs), False


def solve_ls(design: np.ndarray, targets: np.ndarray,
             ridge_fallback: bool = True) -> np.ndarray:
    """Least-squares minimizer; warns when the ridge fallback engages."""
    theta, used_ridge = ls_minimizer(design, targets, ridge_fallback)
    if used_ridge:
        warnings.warn(
            f"rank-deficient design: solved with ridge {RIDGE}", RuntimeWarning
        )
    return theta


def residual_term(a_cf, x_f: np.ndarray, theta_c: np.ndarray
                  ) -> tuple[np.ndarray, float]:
    """Cross-cut contribution A_CF·X_F·theta_C and its Frobenius norm."""
    x_f = np.asarray(x_f, dtype=np.float64)
    theta_c = np.asarray(theta_c, dtype=np.float64)
    if theta_c.ndim == 1:
        theta_c = theta_c[:, None]
    r = a_cf @ (x_f @ theta_c)
    r = np.asarray(r)
    return r, float(np.linalg.norm(r))


def adjacency_blocks(g: SparseGraph, sel: NodeSelection
                     ) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """(A_CC, A_CF) for the given selection C."""
    c = sel.indices
    mask = np.ones(g.num_nodes, dtype=bool)
    mask[c] = False
    f = np.flatnonzero(mask)
    rows = g.csr[c]
    return rows[:, c].tocsr(), rows[:, f].tocsr()


@dataclass
class TheoremTrial:
    """One trial: losses, residual, identity deviation, bound outcomes."""

    n: int
    channels: int
    coarse_size: int
    epsilon: float
    fine_loss: float
    coarse_loss: float          # coarse objective at the sketched minimizer
    coarse_opt_loss: float      # coarse objective at its own minimizer
    restricted_fine_loss: float  # sketched objective at the sketched minimizer
    residual_norm: float
    identity_max_dev: float
    paper_bound_rhs: float
    paper_bound_ok: bool
    factor2_bound_ok: bool
    used_ridge: bool

    def to_dict(self) -> dict:
        return asdict(self)


def check_theorem(
    problem: LinearLSProblem,
    epsilon: float,
    rng: np.random.Generator | None = None,
) -> TheoremTrial:
    """Solve fine/sketched/coarse problems and evaluate the bound once.

    All objectives share the fine 1/2N scaling so they stay comparable.
    The block identity A_CC·X_C·theta + A_CF·X_F·theta = (A·X)_C·theta is
    checked at random theta draws.
    """
    if epsilon <= 0:
        raise TheoryError("epsilon must be positive")
    rng = rng or np.random.default_rng(0)
    a = problem.graph.csr
    x, y = problem.x, problem.y
    n = problem.graph.num_nodes
    c_idx = problem.selection.indices
    f_idx = problem.complement

    ax = a @ x
    theta_fine, ridge_fine = ls_minimizer(ax, y)
    fine_loss = float(0.5 / n * np.sum((ax @ theta_fine - y) ** 2))

    # Sketched problem: keep rows C of the fine design.
    theta_sketch, ridge_sketch = ls_minimizer(ax[c_idx], y[c_idx])
    restricted_fine_loss = float(
        0.5 / n * np.sum((ax[c_idx] @ theta_sketch - y[c_idx]) ** 2)
    )

    a_cc, a_cf = adjacency_blocks(problem.graph, problem.selection)
    design_coarse = np.asarray(a_cc @ x[c_idx])
    coarse_loss = float(
        0.5 / n * np.sum((design_coarse @ theta_sketch - y[c_idx]) ** 2)
    )
    theta_coarse, ridge_coarse = ls_minimizer(design_coarse, y[c_idx])
    coarse_opt_loss = float(
        0.5 / n * np.sum((design_coarse @ theta_coarse - y[c_idx]) ** 2)
    )

    _, r_norm = residual_term(a_cf, x[f_idx], theta_sketch)

    dev = 0.0
    for _ in range(3):
        theta = rng.standard_normal(theta_fine.shape)
        lhs = design_coarse @ theta + residual_term(a_cf, x[f_idx], theta)[0]
        rhs = ax[c_idx] @ theta
        dev = max(dev, float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0)

    paper_rhs = (1.0 + epsilon) / (2.0 * n) * (
        float(np.sum((ax @ theta_fine - y) ** 2)) + r_norm**2
    )
    return TheoremTrial(
        n=n,
        channels=x.shape[1],
        coarse_size=len(problem.selection),
        epsilon=epsilon,
        fine_loss=fine_loss,
        coarse_loss=coarse_loss,
        coarse_opt_loss=coarse_opt_loss,
        restricted_fine_loss=restricted_fine_loss,
        residual_norm=r_norm,
        identity_max_dev=dev,
        paper_bound_rhs=paper_rhs,
        paper_bound_ok=coarse_loss <= paper_rhs,
        factor2_bound_ok=coarse_loss <= 2.0 * paper_rhs,
        used_ridge=ridge_fine or ridge_sketch or ridge_coarse,
    )


def run_theorem_trials(
    problem_factory,
    epsilon: float,
    trials: int,
    seed: int = 0,
) -> dict:
    """Aggregate bound-satisfaction rates over independent trials.

    ``problem_factory(rng)`` must return a fresh LinearLSProblem per call.
    """
    rng = np.random.default_rng(seed)
    results = [check_theorem(problem_factory(rng), epsilon, rng)
               for _ in range(trials)]
    return {
        "trials": trials,
        "epsilon": epsilon,
        "paper_bound_rate": float(np.mean([t.paper_bound_ok for t in results])),
        "factor2_bound_rate": float(np.mean([t.factor2_bound_ok for t in results])),
        "max_identity_dev": float(max(t.identity_max_dev for t in results)),
        "mean_residual_norm": float(np.mean([t.residual_norm for t in results])),
        "mean_fine_loss": float(np.mean([t.fine_loss for t in results])),
        "mean_coarse_loss": float(np.mean([t.coarse_loss for t in results])),
        "per_trial": [t.to_dict() for t in results],
    }
