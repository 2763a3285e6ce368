"""Proximal causal inference for two-occasion marginal structural mean models."""

from .bridges import HBridgeFit, QBridgeFit, fit_h, fit_q
from .core import (ConvergenceError, EstimateReport, InputError, MsmmSpec, NotIdentifiedError,
                   PanelDataset, TreatmentRegime, TreatmentSupport, dataset_from_columns, msmm_design)
from .dgm import DgmParams, apply_misspec, counterfactual_mean, path_traced_mean, simulate, true_beta
from .estimators import (estimate, estimate_dr_sra, estimate_pdr, estimate_pipw, estimate_por,
                         sandwich_variance)
from .harness import Scenario, ScenarioResult, run_scenario, run_suite, table1_suite
from .oracle import (DiscreteWorld, completeness_rank, random_world, solve_bridges_exact,
                     sra_world, verify_identification)
from .solvers import SolverConfig

__all__ = [
    "ConvergenceError", "DgmParams", "DiscreteWorld", "EstimateReport", "HBridgeFit", "InputError",
    "MsmmSpec", "NotIdentifiedError", "PanelDataset", "QBridgeFit", "Scenario", "ScenarioResult",
    "SolverConfig", "TreatmentRegime", "TreatmentSupport", "apply_misspec", "completeness_rank",
    "counterfactual_mean", "dataset_from_columns", "estimate", "estimate_dr_sra", "estimate_pdr",
    "estimate_pipw", "estimate_por", "fit_h", "fit_q", "msmm_design", "path_traced_mean",
    "random_world", "run_scenario", "run_suite", "sandwich_variance", "simulate",
    "solve_bridges_exact", "sra_world", "table1_suite", "true_beta", "verify_identification",
]
