"""Asynchronous parallel stochastic quasi-Newton optimisation (AsySQN).

Variance-reduced stochastic L-BFGS run by several workers against one shared
parameter vector, first-order baselines, a deterministic interleaving
simulator, closed-form convergence diagnostics and a benchmark CLI.
"""

from .data import Dataset, gen_sim1, gen_sim2, parse_libsvm, read_libsvm, row_normalize, write_libsvm
from .engine import (DivergenceError, RunConfig, RunTrace, compute_reference_optimum,
                     epoch_finalize, grid_search_eta, run, run_asysqn, run_asysvrg, run_sgd,
                     run_sqnvr, run_svrg)
from .lbfgs import CorrectionHistory, PushResult, dense_inverse_hessian, push_pair, two_loop_direction
from .model import LossKind, LossModel, hessian_vector_product, sample_gradient, sample_loss
from .vr import VrAnchor, schedule_update, vr_gradient

__version__ = "0.1.0"

__all__ = [
    "CorrectionHistory", "Dataset", "DivergenceError", "LossKind", "LossModel", "PushResult",
    "RunConfig", "RunTrace", "VrAnchor", "compute_reference_optimum", "dense_inverse_hessian",
    "epoch_finalize", "gen_sim1", "gen_sim2", "grid_search_eta", "hessian_vector_product",
    "parse_libsvm", "push_pair", "read_libsvm", "row_normalize", "run", "run_asysqn",
    "run_asysvrg", "run_sgd", "run_sqnvr", "run_svrg", "sample_gradient", "sample_loss",
    "schedule_update", "two_loop_direction", "vr_gradient", "write_libsvm",
]
