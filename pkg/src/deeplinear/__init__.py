"""Deep linear networks under orthogonal and Gaussian initialization.

Training, convergence-theory checks and depth/width phase scans.
"""

from .data import Dataset, DataStats, data_stats, gen_synthetic, reduce_wlog
from .initializers import DimensionPlan, InitScheme, init_weights, sample_haar_orthogonal, scaling_alpha
from .network import NetworkState, forward_output, gradients, least_squares_opt, loss, partial_product
from .trainer import RunRecord, TrainConfig, gd_step, theorem_lr, train_run

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DataStats",
    "data_stats",
    "gen_synthetic",
    "reduce_wlog",
    "DimensionPlan",
    "InitScheme",
    "init_weights",
    "sample_haar_orthogonal",
    "scaling_alpha",
    "NetworkState",
    "forward_output",
    "gradients",
    "least_squares_opt",
    "loss",
    "partial_product",
    "RunRecord",
    "TrainConfig",
    "gd_step",
    "theorem_lr",
    "train_run",
]
