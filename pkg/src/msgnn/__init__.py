"""Multiscale training for small graph neural networks.

Coarse-to-fine and sub-to-full training move one weight stack across a
hierarchy of coarsened graphs; the telescope module estimates the fine loss
from cheap coarse evaluations; the theory module stress-tests the linear
least-squares bound behind it all.
"""

from .coarsening import (
    CoarsenPlan,
    Level,
    LevelHierarchy,
    build_hierarchy,
    ego_select,
    nearest_select,
    random_select,
    topk_select,
)
from .datasets import QtipsSpec, gen_knn_cloud, gen_qtips, gen_sbm, merge_graphs, qtips_dataset
from .engine import (
    FlopCounter,
    GCNLayer,
    GINLayer,
    Model,
    OptimizerState,
    adam_step,
    backward,
    forward,
    init_model,
    least_squares_loss,
    load_weights,
    model_flops_per_pass,
    nll_loss,
    nll_loss_with_grad,
    save_weights,
)
from .graphs import (
    Coordinates,
    GraphData,
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
    restrict_data,
)
from .telescope import (
    IdentitySampler,
    SubsetPairSampler,
    TelescopeConfig,
    loss_gap_gamma,
    telescope_gradient,
    telescopic_loss,
    train_ms_gradient,
)
from .theory import (
    LinearLSProblem,
    check_theorem,
    residual_term,
    run_theorem_trials,
    solve_ls,
)
from .training import (
    MetricLog,
    MetricRecord,
    TrainSchedule,
    coarse_to_fine,
    doubling_schedule,
    evaluate,
    sub_to_full,
    train_single_level,
)

__version__ = "0.1.0"
