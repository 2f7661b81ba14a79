"""Augmented minimax linear estimation of average partial effects in single-index models."""

from .balance import BalanceProblem, SolverOptions, WeightSolution, build_problem, imbalance, oracle_weights, solve_weights
from .comparator import WzConfig, WzFit, estimate_wz, plug_in_ape
from .data import Dataset, read_csv
from .estimator import (
    ApeEstimate,
    EstimationConfig,
    ErrorDecomposition,
    confidence_interval,
    error_decomposition,
    estimate_ape,
    influence_values,
)
from .links import Link, eval_link
from .pilot import PilotFit, PilotOptions, fit_pilot, lambda_path, select_lambda_cv
from .simulate import DgpSpec, SimReport, StudyConfig, emit_boxplot_table, run_study, sample_dgp, tau_oracle

__version__ = "0.1.0"
