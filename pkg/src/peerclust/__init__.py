"""Center-based hard clustering over simulated peer-to-peer networks.

Users hold local data shards and exchange only center estimates with
graph neighbours. Centers follow penalized gradient dynamics: a Laplacian
consensus term pulls neighbouring users' estimates together while a
1/rho-scaled local loss gradient fits the data; growing the penalty
parameter rho drives the network to a common clustering of the full data.
"""

from .data import (
    LabeledDataset,
    LocalShard,
    PartitionSpec,
    ShardedDataset,
    generate_gaussian_mixture,
    inject_outliers,
    load_csv,
    partition,
    save_csv,
)
from .engine import (
    InitSpec,
    RunConfig,
    RunTrace,
    assign_clusters,
    center_round,
    compute_step_size,
    consensus_gap,
    cost_J,
    cost_J_rho,
    fixed_point_residual,
    global_assignment,
    initial_centers,
    lloyd_oracle,
    run,
    run_centralized,
    run_local,
)
from .graph import Graph, TopologySpec, build_graph, lambda_max, laplacian_apply
from .kernels import IMPLEMENTATION as KERNEL_IMPLEMENTATION
from .losses import (
    LossSpec,
    MetricSpec,
    SmoothnessBound,
    closed_form_update,
    distance,
    loss_gradient,
    loss_value,
    smoothness_bound,
)
from .metrics import adjusted_rand_index, per_user_scores, permutation_accuracy

__version__ = "0.1.0"

__all__ = [
    "Graph", "TopologySpec", "build_graph", "lambda_max", "laplacian_apply",
    "LossSpec", "MetricSpec", "SmoothnessBound", "closed_form_update",
    "distance", "loss_gradient", "loss_value", "smoothness_bound",
    "LabeledDataset", "LocalShard", "PartitionSpec", "ShardedDataset",
    "generate_gaussian_mixture", "inject_outliers", "load_csv", "partition",
    "save_csv",
    "InitSpec", "RunConfig", "RunTrace", "assign_clusters", "center_round",
    "compute_step_size", "consensus_gap", "cost_J", "cost_J_rho",
    "fixed_point_residual", "global_assignment", "initial_centers",
    "lloyd_oracle", "run", "run_centralized", "run_local",
    "adjusted_rand_index", "per_user_scores", "permutation_accuracy",
    "KERNEL_IMPLEMENTATION",
]
